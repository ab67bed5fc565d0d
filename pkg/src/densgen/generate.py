"""Autoregressive generation conditioned on a labeled point cloud.

Tokens and geometry bins are temperature-sampled from the model heads; atom
coordinates are restricted to lattice points consistent with the sampled
bond length / angle / dihedral bins (within the configured tolerances) and
chosen by the coordinate heads' log-probabilities over that feasible set.
Rollouts are independent and own their RNGs; results are never exceptions.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .density import LabeledPointCloud
from .encode import encode_cloud
from .fsmiles import (END, PAD, START, FsmilesError, TokenEvent, VOCAB, Vocab,
                      detokenize, trace_ancestors)
from .geom import (DiscretizationParams, ToleranceConfig, dequantize_coords,
                   feasible_lattice_points, midpoint_values, relative_geometry)
from .model import Batch, HEAD_NAMES, ModelConfig, last_position_logits
from .mol import Molecule


class GenerationError(ValueError):
    pass


@dataclass(frozen=True)
class GenerationConfig:
    temperature: float = 0.7
    max_tokens: int = 96
    n_samples: int = 1
    seed: int = 0
    tolerance: ToleranceConfig = field(default_factory=ToleranceConfig)
    max_retries: int = 8

    def __post_init__(self):
        if self.temperature <= 0:
            raise GenerationError("temperature must be positive")


@dataclass
class GenerationResult:
    """One rollout: the assembled molecule (if any), its token trace, and the
    per-atom deviations from the sampled geometry bins."""

    molecule: Molecule | None
    token_trace: list[int]
    residuals: list[dict]
    status: str                     # complete | truncated | invalid
    error: str | None = None


def sample_categorical(logits: np.ndarray, temperature: float,
                       rng: np.random.Generator) -> int:
    """Draw an index from softmax(logits / T); T <= 1e-6 degrades to argmax."""
    logits = np.asarray(logits, dtype=float)
    if not np.all(np.isfinite(logits)):
        raise GenerationError("non-finite logits")
    if temperature <= 1e-6:
        return int(np.argmax(logits))
    z = (logits - logits.max()) / temperature
    e = np.exp(z)
    return int(rng.choice(len(logits), p=e / e.sum()))


def generate(cloud: LabeledPointCloud, params: dict[str, np.ndarray],
             model_cfg: ModelConfig, gen_cfg: GenerationConfig,
             disc: DiscretizationParams = DiscretizationParams()
             ) -> list[GenerationResult]:
    """Run ``n_samples`` independent rollouts conditioned on the cloud."""
    cloud_lat, cloud_cls, center = encode_cloud(cloud, disc)
    if len(cloud_cls) + gen_cfg.max_tokens > model_cfg.n_ctx:
        raise GenerationError(
            f"cloud of {len(cloud_cls)} points + max_tokens {gen_cfg.max_tokens} "
            f"exceeds n_ctx {model_cfg.n_ctx}")
    results = []
    for r in range(gen_cfg.n_samples):
        rng = np.random.default_rng(gen_cfg.seed + r)
        results.append(_rollout(cloud_lat, cloud_cls, center, params,
                                model_cfg, gen_cfg, disc, rng))
    return results


def _rollout(cloud_lat, cloud_cls, center, params, model_cfg: ModelConfig,
             gen_cfg: GenerationConfig, disc: DiscretizationParams,
             rng: np.random.Generator) -> GenerationResult:
    p = len(cloud_cls)
    coord_rows = [row for row in cloud_lat] + [np.zeros(3, dtype=int)]
    type_rows = list(cloud_cls) + [START]
    events: list[TokenEvent] = [TokenEvent("start_0", START, "control")]
    atom_lattice: list[np.ndarray] = []
    residuals: list[dict] = []
    state = _SyntaxState()
    status = "truncated"
    error = None

    try:
        while len(events) < gen_cfg.max_tokens:
            logits = _last_logits(params, model_cfg, coord_rows, type_rows, p)
            tid = _sample_admissible_token(logits["token"], state, gen_cfg, rng)
            if tid is None:
                status, error = "invalid", "no admissible token within max_retries"
                break
            token = VOCAB.token_of(tid)
            kind = Vocab.kind(token)
            event = TokenEvent(token, tid, kind,
                               len(atom_lattice) if kind == "atom" else None)
            events.append(event)
            state.update(token)
            if tid == END:
                status = "complete"
                break

            coords = np.zeros(3, dtype=int)
            if kind == "atom":
                coords, residual = _place_atom(events, atom_lattice, logits,
                                               center, disc, gen_cfg, rng)
                atom_lattice.append(coords)
                residuals.append(residual)
            coord_rows.append(coords)
            type_rows.append(tid)
    except (FsmilesError, GenerationError) as exc:
        status, error = "invalid", str(exc)

    trace = [e.token_id for e in events]
    molecule = None
    if status == "complete":
        try:
            molecule = _assemble(events, atom_lattice, center, disc)
        except (FsmilesError, ValueError) as exc:
            status, error = "invalid", f"detokenization failed: {exc}"
        else:
            if not _residuals_within_slack(residuals, gen_cfg.tolerance, disc):
                status, error = "invalid", "constraint residuals beyond slack"
                molecule = None
    return GenerationResult(molecule, trace, residuals, status, error)


def _last_logits(params, model_cfg, coord_rows, type_rows, n_cloud):
    t = len(type_rows)
    batch = Batch(
        coord_ids=np.asarray(coord_rows, dtype=int)[None, :, :],
        type_ids=np.asarray(type_rows, dtype=int)[None, :],
        is_molecule=(np.arange(t) >= n_cloud)[None, :],
    )
    logits = last_position_logits(params, model_cfg, batch)
    return {name: logits[name][0] for name in HEAD_NAMES}


class _SyntaxState:
    """Just enough bookkeeping to reject structurally impossible tokens."""

    def __init__(self):
        self.paren_depth = 0
        self.in_bracket = False
        self.free_slots = 0
        self.awaiting_first_star = False
        self.fragment_has_atom = False

    def admissible(self, token: str) -> bool:
        base = Vocab.base(token)
        if token in ("pad_0", "start_0"):
            return False
        if self.in_bracket:
            return base not in ("(", ")", "[") and token not in ("sep_0", "end_0")
        if base == ")":
            return self.paren_depth > 0
        if base == "]":
            return False
        if token == "sep_0":
            return (self.paren_depth == 0 and self.free_slots > 0
                    and self.fragment_has_atom)
        if token == "end_0":
            return self.paren_depth == 0 and self.fragment_has_atom
        return True

    def update(self, token: str):
        base = Vocab.base(token)
        if base == "(":
            self.paren_depth += 1
        elif base == ")":
            self.paren_depth -= 1
        elif base == "[":
            self.in_bracket = True
        elif base == "]":
            self.in_bracket = False
        elif token == "sep_0":
            self.free_slots -= 1
            self.awaiting_first_star = True
            self.fragment_has_atom = False
            self.paren_depth = 0
        elif base in ("[*]", "([*])"):
            if self.awaiting_first_star:
                self.awaiting_first_star = False
            else:
                self.free_slots += 1
        elif Vocab.kind(token) == "atom":
            self.fragment_has_atom = True


def _sample_admissible_token(token_logits, state: _SyntaxState,
                             gen_cfg: GenerationConfig,
                             rng: np.random.Generator) -> int | None:
    for _ in range(gen_cfg.max_retries + 1):
        tid = sample_categorical(token_logits, gen_cfg.temperature, rng)
        if state.admissible(VOCAB.token_of(tid)):
            return tid
    return None


def _place_atom(events, atom_lattice, logits, center, disc,
                gen_cfg: GenerationConfig, rng):
    """Sample geometry bins, restrict to the feasible lattice set, and pick
    the point the coordinate heads like best (temperature-sampled)."""
    pos = len(events) - 1
    anc = trace_ancestors(events, pos)
    if anc.r1 is None:
        coords = np.array([
            sample_categorical(logits[h], gen_cfg.temperature, rng)
            for h in ("x", "y", "z")], dtype=int)
        return coords, {"dl": None, "dtheta": None, "dphi": None}

    def anchor(r):
        return None if r is None else dequantize_coords(
            atom_lattice[events[r].atom_index], disc, center)

    v1, v2, v3 = anchor(anc.r1), anchor(anc.r2), anchor(anc.r3)
    l_bin = sample_categorical(logits["l"], gen_cfg.temperature, rng)
    theta_bin = phi_bin = None
    if v2 is not None:
        theta_bin = sample_categorical(logits["theta"], gen_cfg.temperature, rng)
    if v3 is not None:
        phi_bin = sample_categorical(logits["phi"], gen_cfg.temperature, rng)

    feasible = feasible_lattice_points(v3, v2, v1, l_bin, theta_bin, phi_bin,
                                       gen_cfg.tolerance, disc, center)
    logp = {h: _log_softmax(logits[h]) for h in ("x", "y", "z")}
    scores = (logp["x"][feasible[:, 0]] + logp["y"][feasible[:, 1]]
              + logp["z"][feasible[:, 2]])
    choice = sample_categorical(scores, gen_cfg.temperature, rng)
    coords = feasible[choice]

    point = dequantize_coords(coords, disc, center)
    rec = relative_geometry(v3, v2, v1, point, disc)
    l_mid, theta_mid, phi_mid = midpoint_values(l_bin, theta_bin, phi_bin, disc)
    residual = {"dl": abs(rec.l - l_mid),
                "dtheta": None if theta_mid is None else abs(rec.theta - theta_mid),
                "dphi": None if phi_mid is None else _circ(rec.phi, phi_mid)}
    return coords, residual


def _circ(a: float, b: float) -> float:
    d = abs(a - b) % 360.0
    return min(d, 360.0 - d)


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max()
    return z - np.log(np.exp(z).sum())


def _residuals_within_slack(residuals, tol: ToleranceConfig,
                            disc: DiscretizationParams) -> bool:
    half_bin = disc.angle_bin / 2.0
    for r in residuals:
        if r["dl"] is not None and r["dl"] > tol.delta_l + disc.sigma:
            return False
        if r["dtheta"] is not None and r["dtheta"] > tol.delta_theta + half_bin:
            return False
        if r["dphi"] is not None and r["dphi"] > tol.delta_phi + half_bin:
            return False
    return True


def _assemble(events, atom_lattice, center, disc) -> Molecule:
    """Detokenize and de-shift lattice coordinates into angstrom positions."""
    skeleton = detokenize(events)
    if skeleton.n_atoms != len(atom_lattice):
        raise GenerationError(
            f"{skeleton.n_atoms} atoms in graph vs {len(atom_lattice)} placed")
    positions = dequantize_coords(np.asarray(atom_lattice), disc, center)
    atoms = [replace(a, position=positions[i]) for i, a in enumerate(skeleton.atoms)]
    return Molecule(atoms, skeleton.bonds, skeleton.name)
