// SplitMix64 stream, bit-identical to the service implementation, so the
// client and server derive the same per-episode queue lengths from the
// session seed.

const MASK = (1n << 64n) - 1n;
const GAMMA = 0x9e3779b97f4a7c15n;

export function splitmix64(seed: number | bigint, index: number): bigint {
  let z = (BigInt(seed) + BigInt(index + 1) * GAMMA) & MASK;
  z ^= z >> 30n;
  z = (z * 0xbf58476d1ce4e5b9n) & MASK;
  z ^= z >> 27n;
  z = (z * 0x94d049bb133111ebn) & MASK;
  z ^= z >> 31n;
  return z;
}

export function sampleTau(lengths: readonly number[], seed: number, episodeIndex: number): number {
  const z = splitmix64(seed, episodeIndex);
  return lengths[Number(z % BigInt(lengths.length))];
}
