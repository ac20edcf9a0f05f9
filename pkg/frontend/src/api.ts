import { z } from 'zod';

const QuestionSchema = z.object({
  id: z.string(),
  prompt: z.string(),
  kind: z.enum(['boolean', 'integer-range']),
  allowed: z.union([z.null(), z.tuple([z.number(), z.number()])]),
});

export const QuestionnaireSchema = z.object({
  cancer_type: z.string(),
  version: z.string(),
  questions: z.array(QuestionSchema),
});

export const ResultSchema = z.object({
  scs: z.enum(['HIGH', 'LOW']),
  advice: z.string(),
  excluded_from_study: z.boolean(),
});

export const FunnelDaySchema = z.object({
  date: z.string(),
  impressions: z.number(),
  clicks: z.number(),
  starts: z.number(),
  completions: z.number(),
  conversions: z.number(),
  conversion_rate: z.number(),
});

export type Question = z.infer<typeof QuestionSchema>;
export type Questionnaire = z.infer<typeof QuestionnaireSchema>;
export type ScreeningResult = z.infer<typeof ResultSchema>;
export type FunnelDay = z.infer<typeof FunnelDaySchema>;

export type AnswerValue = boolean | number;
export type SexValue = 'female' | 'male' | 'unspecified';
export type ConsentStage = 'pre' | 'post';

export interface SessionMeta {
  campaign_id?: string;
  creative_id?: string;
  query_term?: string;
}

/** The five service operations the wizard drives, plus the metrics feed. */
export interface ScreeningApi {
  createSession(cancerType: string, meta?: SessionMeta): Promise<string>;
  getQuestionnaire(sessionId: string): Promise<Questionnaire>;
  recordConsent(sessionId: string, stage: ConsentStage, granted: boolean): Promise<string>;
  submitAnswers(
    sessionId: string,
    answers: Record<string, AnswerValue>,
    age?: number,
    sex?: SexValue,
  ): Promise<string>;
  getResult(sessionId: string): Promise<ScreeningResult>;
  getFunnelMetrics(dateFrom?: string, dateTo?: string): Promise<FunnelDay[]>;
}

export class ServiceApiError extends Error {
  constructor(
    readonly status: number,
    readonly code: string,
    message: string,
  ) {
    super(message);
    this.name = 'ServiceApiError';
  }
}

type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export class HttpScreeningApi implements ScreeningApi {
  constructor(
    private readonly baseUrl: string,
    private readonly fetchImpl: FetchLike = (input, init) => fetch(input, init),
  ) {}

  private async request(path: string, init?: RequestInit): Promise<unknown> {
    const response = await this.fetchImpl(`${this.baseUrl}${path}`, init);
    const body: unknown = await response.json();
    if (!response.ok) {
      const err = body as { code?: string; message?: string };
      throw new ServiceApiError(
        response.status,
        err.code ?? 'unknown_error',
        err.message ?? `request to ${path} failed with ${response.status}`,
      );
    }
    return body;
  }

  private post(path: string, payload: unknown): Promise<unknown> {
    return this.request(path, {
      method: 'POST',
      headers: { 'content-type': 'application/json' },
      body: JSON.stringify(payload),
    });
  }

  async createSession(cancerType: string, meta: SessionMeta = {}): Promise<string> {
    const body = await this.post('/v1/sessions', { cancer_type: cancerType, ...meta });
    return z.object({ session_id: z.string() }).parse(body).session_id;
  }

  async getQuestionnaire(sessionId: string): Promise<Questionnaire> {
    return QuestionnaireSchema.parse(await this.request(`/v1/sessions/${sessionId}/questionnaire`));
  }

  async recordConsent(sessionId: string, stage: ConsentStage, granted: boolean): Promise<string> {
    const body = await this.post(`/v1/sessions/${sessionId}/consent`, { stage, granted });
    return z.object({ state: z.string() }).parse(body).state;
  }

  async submitAnswers(
    sessionId: string,
    answers: Record<string, AnswerValue>,
    age?: number,
    sex?: SexValue,
  ): Promise<string> {
    const body = await this.post(`/v1/sessions/${sessionId}/answers`, { answers, age, sex });
    return z.object({ state: z.string() }).parse(body).state;
  }

  async getResult(sessionId: string): Promise<ScreeningResult> {
    return ResultSchema.parse(await this.request(`/v1/sessions/${sessionId}/result`));
  }

  async getFunnelMetrics(dateFrom?: string, dateTo?: string): Promise<FunnelDay[]> {
    const params = new URLSearchParams();
    if (dateFrom) params.set('date_from', dateFrom);
    if (dateTo) params.set('date_to', dateTo);
    const query = params.size > 0 ? `?${params.toString()}` : '';
    const body = await this.request(`/v1/metrics/funnel${query}`);
    return z.object({ days: z.array(FunnelDaySchema) }).parse(body).days;
  }
}
