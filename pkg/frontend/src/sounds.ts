// Reward sound ids; assets are placeholders resolved by the host page.

export const SOUND_IDS = ["register", "bonus-50", "bonus-75"] as const;
export type SoundId = (typeof SOUND_IDS)[number];

export type SoundPlayer = (id: SoundId) => void;

export function consolePlayer(): SoundPlayer {
  return (id) => console.debug(`[sound] ${id}`);
}

export function htmlAudioPlayer(doc: Document): SoundPlayer {
  return (id) => {
    const element = doc.getElementById(`sound-${id}`) as HTMLAudioElement | null;
    element?.play().catch(() => undefined);
  };
}
