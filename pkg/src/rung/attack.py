"""Desk-scale adversarial topology attacks on the smoothing pipeline.

An attack toggles up to B edges (add if absent, remove if present) to
maximize a classification attack loss evaluated on the frozen victim
pipeline (evasion setting).  Three attackers are provided:

- random: uniform distinct flips within scope, no pipeline access;
- greedy: commit the single best flip repeatedly, re-evaluating the full
  pipeline after each commit;
- pgd: relax the flip indicators to continuous weights in [0, 1], ascend
  a finite-difference gradient of the loss on the relaxed graph, project
  onto the budget-capped box after every step, and finally draw Bernoulli
  samples of discrete flips, keeping the strongest.

Gradients come from central finite differences rather than
backpropagation: the victim is a fixed-depth unrolled solver, so at desk
scale (pools of at most a few thousand candidates) coordinate-wise
differencing attacks the true pipeline rather than a surrogate.
"""

import csv
from dataclasses import dataclass

import numpy as np

from .graph import build_graph
from .smoothing import Adjacency

#: global-scope candidate enumeration guard: all node pairs are considered
MAX_ENUMERATED_PAIRS = 2_000_000

#: coordinate perturbation for the relaxed-gradient estimate; s lives on
#: [0, 1] so this resolves loss curvature without leaving the box
FD_STEP = 0.05

_METHODS = ("random", "greedy", "pgd")
_SCOPES = ("global", "local")


@dataclass(frozen=True)
class PerturbationSet:
    """Budgeted edge flips; `flips` preserves selection order.

    `relaxed` optionally carries the final relaxed weight of each chosen
    flip (pgd only).  `flags` records degradations such as an exhausted
    pool or an attack weaker than no attack at all.
    """

    flips: tuple
    budget: int
    relaxed: np.ndarray | None = None
    flags: tuple = ()

    def __post_init__(self):
        flips = tuple((min(int(i), int(j)), max(int(i), int(j)))
                      for i, j in self.flips)
        object.__setattr__(self, "flips", flips)
        if len(flips) > self.budget:
            raise ValueError(f"{len(flips)} flips exceed budget {self.budget}")
        if len(set(flips)) != len(flips):
            raise ValueError("duplicate flips")
        for i, j in flips:
            if i == j:
                raise ValueError(f"self-loop flip ({i}, {j})")
        if self.relaxed is not None and len(self.relaxed) != len(flips):
            raise ValueError("relaxed weights must align with flips")


@dataclass(frozen=True)
class AttackConfig:
    """Scope, budget, and method settings for one attack.

    `budget_pct` is a fraction (1.0 = 100%) of the edge count (global
    scope) or of each target's degree (local scope).  `candidate_pool`
    caps how many flips are considered; the pgd attacker ranks candidates
    by their single-flip loss increase on the clean graph to fit the cap,
    while the greedy attacker requires the full in-scope pool to fit.
    """

    scope: str = "global"
    budget_pct: float = 0.1
    targets: tuple = ()
    method: str = "greedy"
    candidate_pool: int = 2000
    loss: str = "margin"
    steps: int = 200
    step_size: float = 0.1
    samples: int = 20
    seed: int = 0

    def __post_init__(self):
        if self.scope not in _SCOPES:
            raise ValueError(f"scope must be one of {_SCOPES}")
        if self.method not in _METHODS:
            raise ValueError(f"method must be one of {_METHODS}")
        if self.budget_pct <= 0:
            raise ValueError("budget_pct must be positive")
        if self.scope == "local" and not len(self.targets):
            raise ValueError("local scope needs target nodes")
        if self.samples < 1:
            raise ValueError("pgd needs at least one sample")
        if self.steps < 0:
            raise ValueError("steps must be non-negative")
        object.__setattr__(self, "targets", tuple(int(t) for t in self.targets))


def attack_budget(g, cfg):
    """Flip budget: round(pct * m) globally, sum of round(pct * d_t) locally."""
    if cfg.scope == "global":
        m = int(np.sum(g.src != g.dst))
        budget = round(cfg.budget_pct * m)
    else:
        budget = sum(round(cfg.budget_pct * int(g.degrees[t]))
                     for t in cfg.targets)
    if budget <= 0:
        raise ValueError(
            f"budget rounds to zero ({cfg.scope} scope at {cfg.budget_pct:g})")
    return int(budget)


def candidate_pairs(g, cfg):
    """All in-scope non-loop flips in lexicographic order."""
    if cfg.scope == "global":
        if g.n * (g.n - 1) // 2 > MAX_ENUMERATED_PAIRS:
            raise ValueError(
                f"global candidate enumeration over {g.n} nodes exceeds the "
                f"desk-scale limit of {MAX_ENUMERATED_PAIRS} pairs")
        iu = np.triu_indices(g.n, k=1)
        return list(zip(iu[0].tolist(), iu[1].tolist()))
    pairs = set()
    for t in cfg.targets:
        for v in range(g.n):
            if v != t:
                pairs.add((min(t, v), max(t, v)))
    return sorted(pairs)


def apply_perturbation(g, ps):
    """Toggle the flips of `ps` on g; applying the same set twice is a no-op.

    Self-loops are untouched (flips never include them) and the loop
    policy carries over; degrees are recomputed.
    """
    edges = {(int(i), int(j)) for i, j in zip(g.src, g.dst) if i != j}
    for pair in ps.flips:
        if pair in edges:
            edges.remove(pair)
        else:
            edges.add(pair)
    return build_graph(g.n, sorted(edges), self_loops=g.self_loops)


def _toggle_one(g, pair):
    return apply_perturbation(g, PerturbationSet(flips=(pair,), budget=1))


def random_attack(g, cfg, seed=None):
    """Uniformly sampled distinct in-scope flips, budget-many of them."""
    budget = attack_budget(g, cfg)
    cands = candidate_pairs(g, cfg)
    if len(cands) < budget:
        raise ValueError(
            f"candidate pool ({len(cands)}) smaller than budget ({budget})")
    rng = np.random.default_rng(cfg.seed if seed is None else seed)
    chosen = rng.choice(len(cands), size=budget, replace=False)
    return PerturbationSet(flips=tuple(cands[k] for k in np.sort(chosen)),
                           budget=budget)


def greedy_attack(g, pipeline, cfg):
    """Coordinate-greedy flips: repeatedly commit the best single flip.

    Requires the full in-scope pool to fit within cfg.candidate_pool.
    After each commit the whole pipeline is re-evaluated on the toggled
    graph; ties break lexicographically and a step without strict
    improvement stops early (flagged "no_improvement").
    """
    budget = attack_budget(g, cfg)
    cands = candidate_pairs(g, cfg)
    if len(cands) > cfg.candidate_pool:
        raise ValueError(
            f"greedy pool ({len(cands)}) exceeds candidate_pool "
            f"({cfg.candidate_pool}); raise the cap or shrink the scope")
    current = g
    current_loss = pipeline.loss(g)
    chosen = []
    taken = set()
    flags = ()
    for _ in range(budget):
        best_pair, best_loss = None, current_loss
        for pair in cands:
            if pair in taken:
                continue
            loss = pipeline.loss(_toggle_one(current, pair))
            if loss > best_loss:
                best_pair, best_loss = pair, loss
        if best_pair is None:
            flags = ("no_improvement",) if len(taken) < len(cands) \
                else ("pool_exhausted",)
            break
        chosen.append(best_pair)
        taken.add(best_pair)
        current = _toggle_one(current, best_pair)
        current_loss = best_loss
    return PerturbationSet(flips=tuple(chosen), budget=budget, flags=flags)


def relaxed_adjacency(g, cands, s):
    """Weighted adjacency A + (1 - 2A) (.) s over the candidate flips.

    Existing candidate edges get weight 1 - s_e, absent ones enter with
    weight s_e; everything else keeps weight 1.  Degrees are recomputed
    from the weights, so the whole pipeline sees the relaxation.
    """
    a = np.ones(g.m)
    extra_src, extra_dst, extra_a = [], [], []
    for pair, weight in zip(cands, s):
        idx = g.edge_index(*pair)
        if idx is not None:
            a[idx] = 1.0 - weight
        else:
            extra_src.append(pair[0])
            extra_dst.append(pair[1])
            extra_a.append(weight)
    src = np.concatenate([g.src, np.array(extra_src, dtype=np.int64)])
    dst = np.concatenate([g.dst, np.array(extra_dst, dtype=np.int64)])
    a = np.concatenate([a, np.array(extra_a, dtype=float)])
    return Adjacency(g.n, src, dst, a)


def project_capped_simplex(v, budget, iters=100):
    """Euclidean projection onto {s : 0 <= s <= 1, sum(s) <= budget}.

    Bisection on the shift mu: s = clip(v - mu, 0, 1) with the smallest
    mu >= 0 whose sum fits the budget.
    """
    s = np.clip(v, 0.0, 1.0)
    if s.sum() <= budget:
        return s
    lo, hi = 0.0, float(np.max(v))
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if np.clip(v - mid, 0.0, 1.0).sum() > budget:
            lo = mid
        else:
            hi = mid
    return np.clip(v - hi, 0.0, 1.0)


def _rank_candidates(g, pipeline, cands, cap):
    """Keep the `cap` flips with the largest single-flip loss on clean g."""
    if len(cands) <= cap:
        return cands
    gains = [pipeline.loss(_toggle_one(g, pair)) for pair in cands]
    order = sorted(range(len(cands)), key=lambda k: (-gains[k], cands[k]))
    return sorted(cands[k] for k in order[:cap])


def _sample_flips(rng, cands, s, budget, max_retries=200):
    for _ in range(max_retries):
        mask = rng.random(len(cands)) < s
        if mask.sum() <= budget:
            return mask
    # keep the highest-weight draws if sampling keeps overshooting
    drawn = np.flatnonzero(mask)
    keep = drawn[np.argsort(-s[drawn], kind="stable")[:budget]]
    out = np.zeros(len(cands), dtype=bool)
    out[keep] = True
    return out


def pgd_attack(g, pipeline, cfg, seed=None):
    """Relaxed projected-gradient attack with Bernoulli rounding.

    Maintains relaxed weights s over a fixed candidate pool (capped by
    single-flip ranking), estimates d loss / d s_e by central differences
    on the relaxed graph, ascends with cfg.step_size, projects onto the
    budget cap after every step, then draws cfg.samples Bernoulli flip
    sets (resampling draws that exceed the budget) and returns the
    strongest.  Returns an empty flagged set if every sample is weaker
    than no attack.
    """
    budget = attack_budget(g, cfg)
    cands = candidate_pairs(g, cfg)
    if not cands:
        raise ValueError("empty candidate pool")
    cands = _rank_candidates(g, pipeline, cands, cfg.candidate_pool)
    n_cand = len(cands)
    s = np.full(n_cand, min(1.0, budget / n_cand))

    def relaxed_loss(vec):
        return pipeline.loss_adjacency(relaxed_adjacency(g, cands, vec))

    for _ in range(cfg.steps):
        grad = np.zeros(n_cand)
        for e in range(n_cand):
            hi = min(1.0, s[e] + FD_STEP)
            lo = max(0.0, s[e] - FD_STEP)
            if hi == lo:
                continue
            probe = s.copy()
            probe[e] = hi
            up = relaxed_loss(probe)
            probe[e] = lo
            down = relaxed_loss(probe)
            grad[e] = (up - down) / (hi - lo)
        s = project_capped_simplex(s + cfg.step_size * grad, budget)

    rng = np.random.default_rng(cfg.seed if seed is None else seed)
    clean_loss = pipeline.loss(g)
    best_mask, best_loss = None, -np.inf
    for _ in range(cfg.samples):
        mask = _sample_flips(rng, cands, s, budget)
        flips = tuple(pair for pair, hit in zip(cands, mask) if hit)
        ps = PerturbationSet(flips=flips, budget=budget)
        loss = pipeline.loss(apply_perturbation(g, ps))
        if loss > best_loss:
            best_mask, best_loss = mask, loss
    if best_loss < clean_loss:
        return PerturbationSet(flips=(), budget=budget,
                               flags=("all_samples_weak",))
    flips = tuple(pair for pair, hit in zip(cands, best_mask) if hit)
    return PerturbationSet(flips=flips, budget=budget,
                           relaxed=s[best_mask], flags=())


def attacked_edge_histogram(g, g_attacked, F, bins=20):
    """Histogram of normalized feature differences over the injected edges.

    Injected means present in g_attacked but not in g; differences use the
    attacked graph's degrees.  Returns (counts, bin_edges).
    """
    F = np.asarray(F, dtype=float)
    before = set(p for p in zip(g.src.tolist(), g.dst.tolist()))
    injected = [(i, j) for i, j in zip(g_attacked.src.tolist(),
                                       g_attacked.dst.tolist())
                if i != j and (i, j) not in before]
    if not injected:
        raise ValueError("no injected edges to histogram")
    inv = g_attacked.inv_sqrt_degrees
    y = [float(np.linalg.norm(F[i] * inv[i] - F[j] * inv[j]))
         for i, j in injected]
    return np.histogram(np.asarray(y), bins=bins)


def save_perturbation(path, g, ps):
    """CSV `src,dst,action` with action = add for injected, remove for cut."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["src", "dst", "action"])
        for i, j in ps.flips:
            action = "remove" if g.has_edge(i, j) else "add"
            writer.writerow([i, j, action])


def load_perturbation(path, budget=None):
    flips = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["src", "dst", "action"]:
            raise ValueError(f"{path}: expected header 'src,dst,action'")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 3 or row[2] not in ("add", "remove"):
                raise ValueError(f"{path}:{lineno}: malformed row {row}")
            flips.append((int(row[0]), int(row[1])))
    return PerturbationSet(flips=tuple(flips),
                           budget=len(flips) if budget is None else budget)
