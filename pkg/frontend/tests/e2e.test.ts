import { spawn, execFileSync, type ChildProcess } from 'node:child_process';
import { existsSync, mkdtempSync, readFileSync, rmSync } from 'node:fs';
import { tmpdir } from 'node:os';
import { join } from 'node:path';

import { afterAll, beforeAll, describe, expect, it } from 'vitest';

import { HttpScreeningApi } from '../src/api.js';
import { buildDashboardView } from '../src/dashboard.js';
import { Wizard } from '../src/wizard.js';

const PORT = 8900 + (process.pid % 500);
const BASE = `http://127.0.0.1:${PORT}`;

let proc: ChildProcess;
let workDir: string;
let conversionsPath: string;

function conversionLines(): string[] {
  if (!existsSync(conversionsPath)) return [];
  return readFileSync(conversionsPath, 'utf8').split('\n').filter((l) => l.trim());
}

async function waitForHealthy(): Promise<void> {
  for (let attempt = 0; attempt < 100; attempt++) {
    try {
      const response = await fetch(`${BASE}/healthz`);
      if (response.ok) return;
    } catch {
      // server not up yet
    }
    await new Promise((resolve) => setTimeout(resolve, 200));
  }
  throw new Error('service did not become healthy');
}

beforeAll(async () => {
  workDir = mkdtempSync(join(tmpdir(), 'webui-e2e-'));
  conversionsPath = join(workDir, 'conversions.jsonl');
  proc = spawn(
    'python3',
    [
      '-c',
      'import uvicorn; from adscreen.service import create_app; ' +
        `uvicorn.run(create_app(), host="127.0.0.1", port=${PORT}, log_level="warning")`,
    ],
    {
      env: {
        ...process.env,
        ADSCREEN_EVENT_LOG: join(workDir, 'events.jsonl'),
        ADSCREEN_AD_CLIENT: `file:${conversionsPath}`,
      },
      stdio: 'ignore',
    },
  );
  await waitForHealthy();
}, 40000);

afterAll(() => {
  proc?.kill();
  rmSync(workDir, { recursive: true, force: true });
});

/** Drives one full wizard session; answers every question with `answer`. */
async function runSession(
  answer: boolean,
  options: { prePostConsent?: [boolean, boolean]; countAnswers?: { count: number } } = {},
): Promise<Wizard> {
  const [pre, post] = options.prePostConsent ?? [true, true];
  const counting: typeof fetch = async (input, init) => {
    if (options.countAnswers && String(input).includes('/answers')) {
      options.countAnswers.count += 1;
    }
    return fetch(input, init);
  };
  const api = new HttpScreeningApi(BASE, (url, init) => counting(url, init));
  const wizard = new Wizard(api);
  await wizard.begin('colon', { campaign_id: 'e2e' });
  await wizard.grantPreConsent(pre);
  if (!pre) return wizard;
  while (!wizard.readyToSubmit()) wizard.answerCurrent(answer);
  await wizard.finish(61, 'male');
  wizard.acknowledgeResult();
  await wizard.grantPostConsent(post);
  return wizard;
}

describe('wizard end-to-end against a live service', () => {
  it('HIGH path produces exactly one conversion event in the service log', async () => {
    const before = conversionLines().length;
    const wizard = await runSession(true);
    expect(wizard.getState().result?.scs).toBe('HIGH');
    expect(wizard.getState().result?.advice.length).toBeGreaterThan(0);
    const after = conversionLines();
    expect(after.length).toBe(before + 1);
    const signal = JSON.parse(after[after.length - 1]!) as {
      session_id: string;
      campaign_meta: { campaign_id: string };
    };
    expect(signal.session_id).toBe(wizard.getState().sessionId);
    expect(signal.campaign_meta.campaign_id).toBe('e2e');
  }, 20000);

  it('LOW path shows reassurance advice and emits no conversion', async () => {
    const before = conversionLines().length;
    const wizard = await runSession(false);
    expect(wizard.getState().result?.scs).toBe('LOW');
    expect(conversionLines().length).toBe(before);
  }, 20000);

  it('declining pre-consent issues zero answer requests', async () => {
    const countAnswers = { count: 0 };
    const wizard = await runSession(true, { prePostConsent: [false, false], countAnswers });
    expect(wizard.getState().step.kind).toBe('done');
    expect(countAnswers.count).toBe(0);
  }, 20000);

  it('dashboard window mean matches the server-side funnel report to display precision', async () => {
    // a few more mixed sessions so the window statistics are non-trivial
    await runSession(true);
    await runSession(false);
    await runSession(true, { prePostConsent: [true, false] });

    const api = new HttpScreeningApi(BASE);
    const days = await api.getFunnelMetrics();
    expect(days.length).toBeGreaterThan(0);
    const view = buildDashboardView(days, days.length);

    // reference computed by the server-side report over the same payload
    const script = [
      'import json, sys',
      'from adscreen.funnel import FunnelStats, funnel_report',
      'days = json.load(sys.stdin)',
      'stats = [FunnelStats(day=i, impressions=d["impressions"], clicks=d["clicks"],',
      '         questionnaire_starts=d["starts"], completions=d["completions"],',
      '         high_scs_conversions=d["conversions"]) for i, d in enumerate(days)]',
      's = funnel_report(stats, window=len(stats))["summary"]',
      'print(f"{s[\'conversion_rate_mean\']:.3f} {s[\'conversion_rate_sd\']:.3f}")',
    ].join('\n');
    const reference = execFileSync('python3', ['-c', script], {
      input: JSON.stringify(days),
      encoding: 'utf8',
    }).trim();
    expect(`${view.summary!.mean.toFixed(3)} ${view.summary!.sd.toFixed(3)}`).toBe(reference);
  }, 20000);
});
