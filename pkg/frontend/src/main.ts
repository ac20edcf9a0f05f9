import { HttpScreeningApi } from './api.js';
import type { Question, SexValue } from './api.js';
import { buildDashboardView, formatSummary, funnelTable, renderConversionChart } from './dashboard.js';
import { Wizard } from './wizard.js';

const api = new HttpScreeningApi('');

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  text?: string,
  className?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  if (text !== undefined) node.textContent = text;
  if (className) node.className = className;
  return node;
}

function button(label: string, onClick: () => void): HTMLButtonElement {
  const b = el('button', label);
  b.addEventListener('click', onClick);
  return b;
}

function renderQuestionInput(root: HTMLElement, question: Question, wizard: Wizard): void {
  root.appendChild(el('p', question.prompt, 'prompt'));
  if (question.kind === 'boolean') {
    root.appendChild(button('Yes', () => void safely(() => wizard.answerCurrent(true))));
    root.appendChild(button('No', () => void safely(() => wizard.answerCurrent(false))));
    return;
  }
  const [lo, hi] = question.allowed ?? [0, 10];
  const input = el('input');
  input.type = 'number';
  input.min = String(lo);
  input.max = String(hi);
  input.value = String(lo);
  root.appendChild(input);
  root.appendChild(button('Next', () => void safely(() => wizard.answerCurrent(Number(input.value)))));
}

function renderProfileForm(root: HTMLElement, wizard: Wizard): void {
  root.appendChild(el('p', 'Almost done — a little about you:', 'prompt'));
  const age = el('input');
  age.type = 'number';
  age.min = '0';
  age.max = '130';
  age.placeholder = 'Age';
  const sex = el('select');
  for (const value of ['unspecified', 'female', 'male']) {
    const option = el('option', value);
    option.value = value;
    sex.appendChild(option);
  }
  root.appendChild(age);
  root.appendChild(sex);
  root.appendChild(
    button('See my result', () =>
      void safely(() => wizard.finish(Number(age.value), sex.value as SexValue)),
    ),
  );
}

async function safely(action: () => unknown): Promise<void> {
  const errorBox = document.getElementById('error');
  try {
    await action();
    if (errorBox) errorBox.textContent = '';
  } catch (err) {
    if (errorBox) {
      errorBox.textContent = `${(err as Error).message} — you can restart the questionnaire.`;
    }
  }
}

function renderWizard(root: HTMLElement): void {
  const params = new URLSearchParams(window.location.search);
  const cancerType = params.get('cancer_type') ?? 'colon';
  const wizard = new Wizard(api);

  function sync(): void {
    const state = wizard.getState();
    root.innerHTML = '';
    root.appendChild(el('div', '', 'error'));
    root.lastElementChild!.id = 'error';
    switch (state.step.kind) {
      case 'landing':
        root.appendChild(el('h2', 'Symptom check'));
        root.appendChild(button('Start', () => void safely(() => wizard.begin(cancerType))));
        break;
      case 'consent_pre':
        root.appendChild(el('p', 'May we use your anonymous answers for research?', 'prompt'));
        root.appendChild(button('I agree', () => void safely(() => wizard.grantPreConsent(true))));
        root.appendChild(button('No thanks', () => void safely(() => wizard.grantPreConsent(false))));
        break;
      case 'question': {
        const question = wizard.currentQuestion();
        if (question) renderQuestionInput(root, question, wizard);
        else renderProfileForm(root, wizard);
        break;
      }
      case 'result':
        root.appendChild(el('p', state.result?.advice ?? '', 'advice'));
        root.appendChild(button('Continue', () => void safely(() => wizard.acknowledgeResult())));
        break;
      case 'consent_post':
        root.appendChild(
          el('p', 'May we keep your anonymous answers now that you have seen the result?', 'prompt'),
        );
        root.appendChild(button('I agree', () => void safely(() => wizard.grantPostConsent(true))));
        root.appendChild(button('No thanks', () => void safely(() => wizard.grantPostConsent(false))));
        break;
      case 'done':
        root.appendChild(el('p', 'Thank you.', 'prompt'));
        root.appendChild(button('Restart', () => wizard.reset()));
        break;
    }
  }

  wizard.subscribe(sync);
  sync();
}

async function renderDashboard(root: HTMLElement): Promise<void> {
  const days = await api.getFunnelMetrics();
  const windowSize = Math.min(10, days.length);
  const view = buildDashboardView(days, windowSize > 0 ? windowSize : undefined);
  root.innerHTML = '';
  const chart = el('div', '', 'chart');
  chart.innerHTML = renderConversionChart(view);
  root.appendChild(chart);
  if (view.summary) root.appendChild(el('p', formatSummary(view.summary), 'summary'));
  const table = el('table');
  for (const [i, cells] of funnelTable(view).entries()) {
    const tr = el('tr');
    for (const cell of cells) tr.appendChild(el(i === 0 ? 'th' : 'td', cell));
    table.appendChild(tr);
  }
  root.appendChild(table);
}

function mount(): void {
  const root = document.getElementById('app');
  if (!root) return;
  const view = new URLSearchParams(window.location.search).get('view');
  if (view === 'dashboard') {
    void renderDashboard(root);
  } else {
    renderWizard(root);
  }
}

mount();
