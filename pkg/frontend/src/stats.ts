/** Trailing windowed mean, numerically identical to the harness oracle. */
export function rollingAverage(values: number[], window: number): number[] {
  if (window < 1) {
    throw new Error(`window must be >= 1, got ${window}`);
  }
  if (values.length === 0) {
    throw new Error('cannot smooth an empty series');
  }
  const out: number[] = [];
  for (let i = 0; i < values.length; i++) {
    const lo = Math.max(0, i - window + 1);
    let sum = 0;
    for (let j = lo; j <= i; j++) sum += values[j];
    out.push(sum / (i + 1 - lo));
  }
  return out;
}

export function mean(values: number[]): number {
  if (values.length === 0) throw new Error('mean of empty series');
  let sum = 0;
  for (const v of values) sum += v;
  return sum / values.length;
}

export function median(values: number[]): number {
  if (values.length === 0) throw new Error('median of empty series');
  const sorted = [...values].sort((a, b) => a - b);
  const mid = Math.floor(sorted.length / 2);
  return sorted.length % 2 ? sorted[mid] : (sorted[mid - 1] + sorted[mid]) / 2;
}

export interface HistogramBin {
  lo: number;
  hi: number;
  count: number;
}

/** Fixed-width half-open bins [k*w, (k+1)*w), dense from min to max. */
export function histogram(values: number[], binWidth: number): HistogramBin[] {
  if (binWidth <= 0) throw new Error('binWidth must be positive');
  if (values.length === 0) return [];
  const indices = values.map((v) => Math.floor(v / binWidth));
  const loIdx = Math.min(...indices);
  const hiIdx = Math.max(...indices);
  const counts = new Map<number, number>();
  for (const k of indices) counts.set(k, (counts.get(k) ?? 0) + 1);
  const bins: HistogramBin[] = [];
  for (let k = loIdx; k <= hiIdx; k++) {
    bins.push({ lo: k * binWidth, hi: (k + 1) * binWidth, count: counts.get(k) ?? 0 });
  }
  return bins;
}

/** Cut the long tail: drop every bin at or beyond the clip value. */
export function clipBins(bins: HistogramBin[], clipSeconds: number): HistogramBin[] {
  return bins.filter((b) => b.lo < clipSeconds);
}
