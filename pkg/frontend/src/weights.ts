/**
 * Weight normalization mirroring the server: each weight is raw / sum(raw),
 * summed left to right in feature order, so the displayed values match what
 * the render endpoint will compute bit for bit.
 */
export function normalizeWeights(
  raw: ReadonlyMap<string, number> | Record<string, number>,
): Map<string, number> {
  const entries: [string, number][] =
    raw instanceof Map ? [...raw.entries()] : Object.entries(raw);
  if (entries.length === 0) {
    throw new Error("no weights given");
  }
  for (const [name, value] of entries) {
    if (!Number.isFinite(value) || value < 0) {
      throw new Error(`weight for ${name} must be a nonnegative number`);
    }
  }
  let total = 0;
  for (const [, value] of entries) {
    total += value;
  }
  if (total <= 0) {
    throw new Error("at least one weight must be positive");
  }
  return new Map(entries.map(([name, value]) => [name, value / total]));
}

export function weightSum(normalized: ReadonlyMap<string, number>): number {
  let total = 0;
  for (const value of normalized.values()) {
    total += value;
  }
  return total;
}
