"""Closed-loop ad-campaign simulator.

A synthetic population issues trigger queries; an ad system with a fixed
daily budget chooses whom to show ads, observes clicks and conversion
signals, and adapts its targeting policy day by day.  The funnel is wired
through the real rule engine: completed questionnaires are scored on
synthetic answers generated from each user's latent state.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .funnel import FunnelStats
from .rules import Questionnaire, Response, Scs, Sex, load_ruleset, score


@dataclass(frozen=True)
class CountryProfile:
    code: str
    weight: float
    gdp_per_capita: float
    internet_penetration_pct: float
    life_expectancy_yrs: float


DEFAULT_COUNTRIES = (CountryProfile("US", 1.0, 63000.0, 90.0, 79.0),)


@dataclass(frozen=True)
class PopulationConfig:
    n_users: int = 10000
    prevalence: float = 0.15
    signal_strength: float = 0.8  # 0 = features uninformative
    n_features: int = 5
    base_ctr_mean: float = 0.10
    completion_prob_mean: float = 0.36
    countries: tuple[CountryProfile, ...] = DEFAULT_COUNTRIES

    def validate(self) -> None:
        if self.n_users < 1:
            raise ValueError("n_users must be >= 1")
        if not 0.0 < self.prevalence < 1.0:
            raise ValueError("prevalence must be in (0, 1)")
        if not 0.0 <= self.signal_strength <= 1.0:
            raise ValueError("signal_strength must be in [0, 1]")
        for m in (self.base_ctr_mean, self.completion_prob_mean):
            if not 0.0 <= m <= 1.0:
                raise ValueError("probability means must be in [0, 1]")


@dataclass
class SimUser:
    user_id: str
    latent_high_scs: bool
    features: np.ndarray
    country: str
    age: int
    sex: Sex
    base_ctr: float
    completion_prob: float
    completed: bool = False


@dataclass(frozen=True)
class LearnerSpec:
    kind: str = "online_logistic"  # | "thompson_beta_segments" | "random_baseline"
    learning_rate: float = 0.5
    prior_alpha: float = 1.0
    prior_beta: float = 1.0
    n_segments: int = 10
    epsilon: float = 0.1  # exploration fraction of daily impressions

    def validate(self) -> None:
        if self.kind not in ("online_logistic", "thompson_beta_segments", "random_baseline"):
            raise ValueError(f"unknown learner kind {self.kind!r}")
        if not 0.0 <= self.epsilon <= 1.0:
            raise ValueError("epsilon must be in [0, 1]")


@dataclass(frozen=True)
class CampaignConfig:
    daily_budget: float = 15.0
    cost_per_click: float = 0.50
    start_prob: float = 0.45  # click -> begins questionnaire
    consent_pre_prob: float = 0.95
    consent_post_prob: float = 0.85
    symptom_yes_prob_high: float = 0.9
    symptom_yes_prob_low: float = 0.05

    @property
    def click_capacity(self) -> int:
        return int(self.daily_budget // self.cost_per_click)


class OnlineLogisticLearner:
    """Per-user-feature logistic model trained on daily (features, converted)
    observations; several SGD passes over each day's batch."""

    steps_per_day = 10
    l2 = 1e-3

    def __init__(self, spec: LearnerSpec, n_features: int):
        self.lr = spec.learning_rate
        self.w = np.zeros(n_features)
        self.b = 0.0

    def priorities(self, features: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        z = np.clip(features @ self.w + self.b, -30, 30)
        return 1.0 / (1.0 + np.exp(-z))

    def update(self, features: np.ndarray, converted: np.ndarray, rng: np.random.Generator) -> None:
        if len(converted) == 0:
            return
        n = len(converted)
        # center the batch so the class base rate is absorbed by the bias,
        # not by the weights (priorities only depend on the weight direction)
        centered = features - features.mean(axis=0)
        for _ in range(self.steps_per_day):
            z = np.clip(centered @ self.w + self.b, -30, 30)
            p = 1.0 / (1.0 + np.exp(-z))
            err = p - converted
            self.w -= self.lr * (centered.T @ err / n + self.l2 * self.w)
            self.b -= self.lr * float(err.mean())

    def snapshot(self) -> dict:
        return {"kind": "online_logistic", "weights": self.w.tolist(), "bias": self.b}


class ThompsonSegmentLearner:
    """Beta-Bernoulli Thompson sampling over feature-quantile segments."""

    def __init__(self, spec: LearnerSpec, n_features: int):
        self.n_segments = spec.n_segments
        self.alpha = np.full(spec.n_segments, spec.prior_alpha)
        self.beta = np.full(spec.n_segments, spec.prior_beta)
        self.edges: np.ndarray | None = None

    def _segment(self, features: np.ndarray) -> np.ndarray:
        proj = features.sum(axis=1)
        if self.edges is None:
            qs = np.linspace(0, 1, self.n_segments + 1)[1:-1]
            self.edges = np.quantile(proj, qs)
        return np.searchsorted(self.edges, proj)

    def priorities(self, features: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        seg = self._segment(features)
        theta = rng.beta(self.alpha, self.beta)
        return theta[seg]

    def update(self, features: np.ndarray, converted: np.ndarray, rng: np.random.Generator) -> None:
        if len(converted) == 0:
            return
        seg = self._segment(features)
        for s, c in zip(seg, converted):
            self.alpha[s] += c
            self.beta[s] += 1 - c

    def snapshot(self) -> dict:
        return {
            "kind": "thompson_beta_segments",
            "alpha": self.alpha.tolist(),
            "beta": self.beta.tolist(),
        }


class RandomBaselineLearner:
    """Uniform-random priorities; learns nothing."""

    def priorities(self, features: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        return rng.random(features.shape[0])

    def update(self, features: np.ndarray, converted: np.ndarray, rng: np.random.Generator) -> None:
        pass

    def snapshot(self) -> dict:
        return {"kind": "random_baseline"}


def make_learner(spec: LearnerSpec, n_features: int):
    spec.validate()
    if spec.kind == "online_logistic":
        return OnlineLogisticLearner(spec, n_features)
    if spec.kind == "thompson_beta_segments":
        return ThompsonSegmentLearner(spec, n_features)
    return RandomBaselineLearner()


@dataclass
class CampaignState:
    day: int = 0
    total_impressions: int = 0
    total_clicks: int = 0
    history: list[FunnelStats] = field(default_factory=list)

    def ctr_estimate(self, prior: float) -> float:
        if self.total_impressions < 100:
            return prior
        return max(self.total_clicks / self.total_impressions, 1e-3)


def generate_population(cfg: PopulationConfig, seed: int) -> list[SimUser]:
    """Synthetic population; features are shifted along a fixed direction for
    latent-high users in proportion to signal_strength."""
    cfg.validate()
    rng = np.random.default_rng(seed)
    n, k = cfg.n_users, cfg.n_features
    latent = rng.random(n) < cfg.prevalence
    shift = 3.0 * cfg.signal_strength / np.sqrt(k)
    features = rng.normal(0.0, 1.0, (n, k)) + latent[:, None] * shift
    weights = np.array([c.weight for c in cfg.countries], float)
    country_idx = rng.choice(len(cfg.countries), size=n, p=weights / weights.sum())
    ages_low = rng.integers(18, 80, n)
    ages_high = rng.integers(40, 80, n)
    sexes = rng.integers(0, 2, n)
    base_ctr = np.clip(rng.normal(cfg.base_ctr_mean, 0.02, n), 0.01, 0.5)
    completion = np.clip(rng.normal(cfg.completion_prob_mean, 0.05, n), 0.05, 0.95)
    users = []
    for i in range(n):
        users.append(
            SimUser(
                user_id=f"u{i:06d}",
                latent_high_scs=bool(latent[i]),
                features=features[i],
                country=cfg.countries[country_idx[i]].code,
                age=int(ages_high[i] if latent[i] else ages_low[i]),
                sex=Sex.FEMALE if sexes[i] else Sex.MALE,
                base_ctr=float(base_ctr[i]),
                completion_prob=float(completion[i]),
            )
        )
    return users


def synthetic_answers(
    user: SimUser, q: Questionnaire, cfg: CampaignConfig, rng: np.random.Generator
) -> Response:
    """Latent-high users endorse symptoms with high probability, latent-low
    with low probability; scoring then runs through the real rule engine."""
    p_yes = cfg.symptom_yes_prob_high if user.latent_high_scs else cfg.symptom_yes_prob_low
    answers = {}
    for question in q.questions:
        if question.kind == "boolean":
            answers[question.id] = bool(rng.random() < p_yes)
        elif question.kind == "integer-range":
            lo, hi = question.allowed
            answers[question.id] = int(hi if rng.random() < p_yes else lo)
        else:
            answers[question.id] = question.allowed[0]
    return Response(
        questionnaire_version=q.version, answers=answers, age=user.age, sex=user.sex
    )


def run_day(
    state: CampaignState,
    pool: list[SimUser],
    learner,
    spec: LearnerSpec,
    cfg: CampaignConfig,
    questionnaire: Questionnaire,
    rng: np.random.Generator,
    session_driver=None,
) -> FunnelStats:
    """One simulated day.  Mutates state, user completion flags, and the
    learner.  When session_driver is given, each click is also played through
    it (the real HTTP-service funnel) instead of the internal funnel model.
    """
    eligible = [u for u in pool if not u.completed]
    if not eligible:
        stats = FunnelStats(day=state.day)
        state.history.append(stats)
        state.day += 1
        return stats

    capacity = cfg.click_capacity
    ctr_est = state.ctr_estimate(sum(u.base_ctr for u in eligible) / len(eligible))
    n_impr = min(len(eligible), max(1, round(capacity / ctr_est)))

    features = np.vstack([u.features for u in eligible])
    prio = learner.priorities(features, rng)
    n_explore = int(round(spec.epsilon * n_impr))
    order = np.argsort(-prio, kind="stable")
    chosen = list(order[: n_impr - n_explore])
    remaining = order[n_impr - n_explore :]
    if n_explore > 0 and len(remaining) > 0:
        chosen.extend(rng.choice(remaining, size=min(n_explore, len(remaining)), replace=False))
    serve_order = rng.permutation(len(chosen))

    impressions = clicks = starts = completions = conversions = 0
    obs_x, obs_y = [], []
    for pos in serve_order:
        if clicks >= capacity:
            break  # budget exhausted: ad stops serving for the day
        user = eligible[chosen[pos]]
        impressions += 1
        if rng.random() >= user.base_ctr:
            continue
        clicks += 1
        converted = False
        if session_driver is not None:
            outcome = session_driver(user, rng)
            starts += outcome["started"]
            completions += outcome["completed"]
            converted = outcome["converted"]
            conversions += converted
            if outcome["completed"]:
                user.completed = True
        else:
            if rng.random() < cfg.start_prob:
                starts += 1
                if rng.random() < user.completion_prob:
                    completions += 1
                    user.completed = True
                    consent_pre = rng.random() < cfg.consent_pre_prob
                    result = score(questionnaire, synthetic_answers(user, questionnaire, cfg, rng))
                    consent_post = rng.random() < cfg.consent_post_prob
                    if result.scs is Scs.HIGH and consent_pre and consent_post:
                        converted = True
                        conversions += 1
        obs_x.append(user.features)
        obs_y.append(1 if converted else 0)

    if obs_x:
        learner.update(np.vstack(obs_x), np.asarray(obs_y, float), rng)

    assert clicks * cfg.cost_per_click <= cfg.daily_budget
    stats = FunnelStats(
        day=state.day,
        impressions=impressions,
        clicks=clicks,
        questionnaire_starts=starts,
        completions=completions,
        high_scs_conversions=conversions,
    )
    state.total_impressions += impressions
    state.total_clicks += clicks
    state.history.append(stats)
    state.day += 1
    return stats


@dataclass
class CampaignResult:
    daily: list[FunnelStats]
    policy_snapshots: list[dict]
    seed: int


def run_campaign(
    pop: list[SimUser],
    spec: LearnerSpec,
    days: int,
    seed: int,
    cfg: CampaignConfig | None = None,
    questionnaire: Questionnaire | None = None,
    session_driver=None,
) -> CampaignResult:
    """Sequential daily loop with threaded state; reproducible given seed."""
    if days < 1:
        raise ValueError("days must be >= 1")
    cfg = cfg or CampaignConfig()
    if questionnaire is None:
        questionnaire = load_ruleset(Path(__file__).parent / "data" / "rulesets" / "colon.sample")
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    n_features = pop[0].features.shape[0]
    learner = make_learner(spec, n_features)
    state = CampaignState()
    snapshots = []
    for _ in range(days):
        run_day(state, pop, learner, spec, cfg, questionnaire, rng, session_driver)
        snapshots.append(learner.snapshot())
    return CampaignResult(daily=state.history, policy_snapshots=snapshots, seed=seed)


def service_session_driver(service, cfg: CampaignConfig, questionnaire: Questionnaire):
    """Build a run_day session driver that plays each click through a real
    ScreeningService instance (create session, consents, answers, result)."""

    def driver(user: SimUser, rng: np.random.Generator) -> dict:
        outcome = {"started": 0, "completed": 0, "converted": False}
        sid = service.create_session(
            questionnaire.cancer_type, campaign_id="sim", creative_id="", query_term=""
        )
        granted_pre = bool(rng.random() < cfg.consent_pre_prob)
        service.record_consent(sid, "pre", granted_pre)
        if not granted_pre or rng.random() >= cfg.start_prob:
            return outcome
        outcome["started"] = 1
        response = synthetic_answers(user, questionnaire, cfg, rng)
        if rng.random() >= user.completion_prob:
            # abandons midway: submit only the first answer, no age
            first = questionnaire.questions[0]
            service.submit_answers(sid, {first.id: response.answers[first.id]})
            return outcome
        state = service.submit_answers(
            sid, dict(response.answers), age=user.age, sex=user.sex.value
        )
        if state != "completed":
            return outcome
        outcome["completed"] = 1
        service.record_consent(sid, "post", bool(rng.random() < cfg.consent_post_prob))
        result = service.get_result(sid)
        outcome["converted"] = result["scs"] == "HIGH" and not result["excluded_from_study"]
        return outcome

    return driver


@dataclass(frozen=True)
class SimConfig:
    """Top-level simulation config, loadable from JSON."""

    population: PopulationConfig
    learner: LearnerSpec
    campaign: CampaignConfig
    days: int
    cancer_type: str = "colon"

    @classmethod
    def from_file(cls, path: str | Path) -> "SimConfig":
        doc = json.loads(Path(path).read_text())
        countries = tuple(
            CountryProfile(**c) for c in doc.get("population", {}).pop("countries", [])
        ) or DEFAULT_COUNTRIES
        pop = PopulationConfig(countries=countries, **doc.get("population", {}))
        pop.validate()
        spec = LearnerSpec(**doc.get("learner", {}))
        spec.validate()
        campaign = CampaignConfig(**doc.get("campaign", {}))
        days = int(doc["days"])
        if days < 1:
            raise ValueError("days must be >= 1")
        return cls(
            population=pop,
            learner=spec,
            campaign=campaign,
            days=days,
            cancer_type=doc.get("cancer_type", "colon"),
        )


def default_paperlike_config_path() -> Path:
    return Path(__file__).parent / "data" / "paperlike.config"
