import type {
  AnswerValue,
  Questionnaire,
  ScreeningApi,
  ScreeningResult,
  SessionMeta,
  SexValue,
} from './api.js';

export type WizardStep =
  | { kind: 'landing' }
  | { kind: 'consent_pre' }
  | { kind: 'question'; index: number }
  | { kind: 'result' }
  | { kind: 'consent_post' }
  | { kind: 'done' };

export interface WizardState {
  step: WizardStep;
  sessionId: string | null;
  questionnaire: Questionnaire | null;
  /** Answers collected so far, kept only in memory (never persisted). */
  answers: Record<string, AnswerValue>;
  result: ScreeningResult | null;
  /** True when the respondent opted out at either consent gate. */
  declined: boolean;
}

export class WizardStateError extends Error {
  constructor(action: string, step: WizardStep) {
    super(`${action} is not allowed in step '${step.kind}'`);
    this.name = 'WizardStateError';
  }
}

function initialState(): WizardState {
  return {
    step: { kind: 'landing' },
    sessionId: null,
    questionnaire: null,
    answers: {},
    result: null,
    declined: false,
  };
}

/**
 * Questionnaire wizard: consent -> questions -> score/advice -> post-consent.
 *
 * The wizard only ever issues requests in an order the service session state
 * machine accepts, and it issues no answer request unless pre-consent was
 * granted. All medical content (score, advice text) comes verbatim from the
 * service payloads; the client adds none.
 */
export class Wizard {
  private state: WizardState = initialState();
  private listeners: Array<(s: WizardState) => void> = [];

  constructor(private readonly api: ScreeningApi) {}

  getState(): WizardState {
    return this.state;
  }

  subscribe(listener: (s: WizardState) => void): () => void {
    this.listeners.push(listener);
    return () => {
      this.listeners = this.listeners.filter((l) => l !== listener);
    };
  }

  private setState(patch: Partial<WizardState>): void {
    this.state = { ...this.state, ...patch };
    for (const listener of this.listeners) listener(this.state);
  }

  private expect(action: string, ...kinds: Array<WizardStep['kind']>): void {
    if (!kinds.includes(this.state.step.kind)) {
      throw new WizardStateError(action, this.state.step);
    }
  }

  /** Landing-page click: opens the session and loads the questionnaire. */
  async begin(cancerType: string, meta?: SessionMeta): Promise<void> {
    this.expect('begin', 'landing');
    const sessionId = await this.api.createSession(cancerType, meta);
    const questionnaire = await this.api.getQuestionnaire(sessionId);
    this.setState({ sessionId, questionnaire, step: { kind: 'consent_pre' } });
  }

  async grantPreConsent(granted: boolean): Promise<void> {
    this.expect('grantPreConsent', 'consent_pre');
    await this.api.recordConsent(this.sessionId(), 'pre', granted);
    if (!granted) {
      this.setState({ declined: true, step: { kind: 'done' } });
      return;
    }
    this.setState({ step: { kind: 'question', index: 0 } });
  }

  currentQuestion() {
    if (this.state.step.kind !== 'question' || !this.state.questionnaire) return null;
    return this.state.questionnaire.questions[this.state.step.index] ?? null;
  }

  /** Records the current answer in memory and advances to the next question. */
  answerCurrent(value: AnswerValue): void {
    this.expect('answerCurrent', 'question');
    const question = this.currentQuestion();
    if (!question) throw new WizardStateError('answerCurrent', this.state.step);
    const index = (this.state.step as { kind: 'question'; index: number }).index;
    this.setState({
      answers: { ...this.state.answers, [question.id]: value },
      step: { kind: 'question', index: index + 1 },
    });
  }

  /** True once every question has an in-memory answer. */
  readyToSubmit(): boolean {
    const q = this.state.questionnaire;
    return (
      this.state.step.kind === 'question' &&
      q !== null &&
      this.state.step.index >= q.questions.length
    );
  }

  /** Submits all answers plus profile in one request and fetches the result. */
  async finish(age: number, sex: SexValue): Promise<void> {
    this.expect('finish', 'question');
    if (!this.readyToSubmit()) {
      throw new WizardStateError('finish (questions remain)', this.state.step);
    }
    const sessionId = this.sessionId();
    const state = await this.api.submitAnswers(sessionId, this.state.answers, age, sex);
    if (state !== 'completed') {
      throw new Error(`expected the session to complete, service reports '${state}'`);
    }
    const result = await this.api.getResult(sessionId);
    this.setState({ result, step: { kind: 'result' } });
  }

  /** Respondent has read the advice; move to the post-study consent gate. */
  acknowledgeResult(): void {
    this.expect('acknowledgeResult', 'result');
    this.setState({ step: { kind: 'consent_post' } });
  }

  async grantPostConsent(granted: boolean): Promise<void> {
    this.expect('grantPostConsent', 'consent_post');
    await this.api.recordConsent(this.sessionId(), 'post', granted);
    this.setState({ declined: this.state.declined || !granted, step: { kind: 'done' } });
  }

  reset(): void {
    this.setState(initialState());
  }

  private sessionId(): string {
    if (!this.state.sessionId) throw new WizardStateError('session access', this.state.step);
    return this.state.sessionId;
  }
}
