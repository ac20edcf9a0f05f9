import type { FunnelDay } from './api.js';

export interface RatePoint {
  date: string;
  rate: number;
}

export interface WindowSummary {
  window: number;
  mean: number;
  sd: number;
}

export interface DashboardView {
  rows: FunnelDay[];
  series: RatePoint[];
  summary: WindowSummary | null;
}

/** Conversion rate with a zero-click day rendered as 0, never NaN. */
export function conversionRate(day: FunnelDay): number {
  return day.clicks > 0 ? day.conversions / day.clicks : 0;
}

function meanSd(values: number[]): { mean: number; sd: number } {
  const mean = values.reduce((a, b) => a + b, 0) / values.length;
  const variance = values.reduce((a, b) => a + (b - mean) ** 2, 0) / values.length;
  return { mean, sd: Math.sqrt(variance) };
}

/**
 * Pure projection of the funnel metrics payload: per-day table rows, the
 * conversion-rate series, and a trailing-window mean/sd overlay. Never
 * mutates server data.
 */
export function buildDashboardView(days: FunnelDay[], windowSize?: number): DashboardView {
  const rows = [...days].sort((a, b) => a.date.localeCompare(b.date));
  const series = rows.map((d) => ({ date: d.date, rate: conversionRate(d) }));
  let summary: WindowSummary | null = null;
  if (windowSize !== undefined) {
    if (windowSize < 1 || windowSize > rows.length) {
      throw new RangeError(`window ${windowSize} out of range for ${rows.length} days`);
    }
    const tail = series.slice(-windowSize).map((p) => p.rate);
    summary = { window: windowSize, ...meanSd(tail) };
  }
  return { rows, series, summary };
}

/** Display formatting shared by the chart annotation and the table footer. */
export function formatSummary(summary: WindowSummary): string {
  return `trailing-${summary.window}-day conversion rate ${summary.mean.toFixed(3)} (sd ${summary.sd.toFixed(3)})`;
}

export interface ChartOptions {
  width?: number;
  height?: number;
  margin?: number;
}

/**
 * Renders the conversion-rate series as an SVG line chart string. Pure
 * string output so it is testable without a DOM and servable as-is.
 */
export function renderConversionChart(view: DashboardView, options: ChartOptions = {}): string {
  const width = options.width ?? 640;
  const height = options.height ?? 320;
  const margin = options.margin ?? 40;
  if (view.series.length === 0) {
    return (
      `<svg xmlns="http://www.w3.org/2000/svg" width="${width}" height="${height}" role="img">` +
      `<text x="${width / 2}" y="${height / 2}" text-anchor="middle">No data in range</text></svg>`
    );
  }
  const maxRate = Math.max(...view.series.map((p) => p.rate), 1e-9);
  const n = view.series.length;
  const sx = (i: number) => margin + (n === 1 ? 0 : (i / (n - 1)) * (width - 2 * margin));
  const sy = (rate: number) => height - margin - (rate / maxRate) * (height - 2 * margin);
  const points = view.series.map((p, i) => `${sx(i).toFixed(1)},${sy(p.rate).toFixed(1)}`).join(' ');
  const annotation = view.summary
    ? `<text x="${width - margin}" y="${margin - 8}" text-anchor="end" font-size="11">${formatSummary(view.summary)}</text>`
    : '';
  return (
    `<svg xmlns="http://www.w3.org/2000/svg" width="${width}" height="${height}" role="img">` +
    `<rect width="100%" height="100%" fill="white"/>` +
    `<line x1="${margin}" y1="${height - margin}" x2="${width - margin}" y2="${height - margin}" stroke="#333"/>` +
    `<line x1="${margin}" y1="${margin}" x2="${margin}" y2="${height - margin}" stroke="#333"/>` +
    `<text x="${margin - 6}" y="${margin}" text-anchor="end" font-size="10">${maxRate.toFixed(3)}</text>` +
    `<text x="${margin - 6}" y="${height - margin}" text-anchor="end" font-size="10">0</text>` +
    `<text x="${margin}" y="${height - margin + 16}" font-size="10">${view.series[0]!.date}</text>` +
    `<text x="${width - margin}" y="${height - margin + 16}" text-anchor="end" font-size="10">${view.series[n - 1]!.date}</text>` +
    annotation +
    `<polyline fill="none" stroke="steelblue" stroke-width="1.5" points="${points}"/>` +
    `</svg>`
  );
}

const TABLE_COLUMNS = [
  'date',
  'impressions',
  'clicks',
  'starts',
  'completions',
  'conversions',
  'conversion_rate',
] as const;

/** Table model: header row plus one row per day, rates at display precision. */
export function funnelTable(view: DashboardView): string[][] {
  const header = [...TABLE_COLUMNS];
  const rows = view.rows.map((d) => [
    d.date,
    String(d.impressions),
    String(d.clicks),
    String(d.starts),
    String(d.completions),
    String(d.conversions),
    conversionRate(d).toFixed(3),
  ]);
  return [header, ...rows];
}
