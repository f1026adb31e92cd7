"""End-to-end gradient verification on a small random case graph.

Builds a 12-node graph (9 cases, 3 charges), runs the attention model with
the combined contrastive + degree objective, and compares every analytic
parameter gradient against central finite differences. Runs in double
precision; the expected worst-case relative error is well under 1e-4.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from . import gcg, gnn, objective


def build_random_graph(
    seed: int, n_cases: int = 9, n_charges: int = 3, dim: int = 6
) -> tuple[gcg.GcgAdjacency, gcg.NodeFeatures]:
    """Random symmetric adjacency blocks and unit-norm float features."""
    rng = np.random.default_rng(seed)
    a_case = np.triu((rng.random((n_cases, n_cases)) < 0.35).astype(np.uint8), k=1)
    a_case = a_case | a_case.T
    a_charge = np.triu(
        (rng.random((n_charges, n_charges)) < 0.4).astype(np.uint8), k=1
    )
    a_charge = a_charge | a_charge.T
    a_bridge = (rng.random((n_charges, n_cases)) < 0.3).astype(np.uint8)
    a = gcg.compose(a_case, a_charge, a_bridge)
    adjacency = gcg.GcgAdjacency(
        n=n_cases, m=n_charges, a_case=a_case, a_charge=a_charge,
        a_bridge=a_bridge, a=a,
    )
    feats = rng.normal(size=(n_cases + n_charges, dim))
    feats /= np.linalg.norm(feats, axis=1, keepdims=True)
    features = gcg.NodeFeatures(
        dim=dim,
        case_features=feats[:n_cases].astype(np.float64),
        charge_features=feats[n_cases:].astype(np.float64),
        source=gcg.FeatureSource.HASHED_TF,
    )
    return adjacency, features


def full_loss_gradcheck(
    seed: int,
    lam: float = 1e-3,
    layers: int = 2,
    eps: float = 1e-4,
) -> float:
    """Max relative gradient error of the full training loss.

    Runs in extended precision: some attention-vector coordinates have a
    structurally zero gradient (a destination-side shift cancels inside the
    per-segment softmax), and at float64 the finite-difference quotient on
    those coordinates is rounding noise of order ulp(loss)/(2*eps), above
    the 1e-8 error floor. Longdouble pushes that noise to ~1e-7.
    """
    adjacency, features = build_random_graph(seed)
    n_cases = adjacency.n
    config = gnn.GnnConfig(
        arch=gnn.Arch.GAT,
        layers=layers,
        heads=1,
        dropout=0.0,
        activation=gnn.Activation.ELU,
        dim=features.dim,
    )
    params = gnn.init_params(config, seed, dtype=np.longdouble)
    case_rows = np.arange(n_cases, dtype=np.int64)

    # two fixed contrastive entries plus the degree penalty over candidates
    entries = [
        objective.BatchEntry(query=0, positive=2, easy=(3,), hard=(4,)),
        objective.BatchEntry(query=1, positive=5, easy=(6,), hard=(7,)),
    ]
    candidates = list(range(2, n_cases))
    loss_config = objective.LossConfig(tau=0.1, lam=lam, n_easy=1, n_hard=1)

    param_list = params.all()

    def loss_fn(_unused) -> ad.Tensor:
        h = gnn.forward(adjacency, features, params, config, train=False, seed=seed)
        h_cases = ad.gather_rows(h, case_rows)
        losses = [
            objective.info_nce(
                h_cases, entry, [other.positive for other in entries if other is not entry],
                loss_config.tau, loss_config.sim,
            )
            for entry in entries
        ]
        degreg = objective.deg_reg(h_cases, candidates)
        return objective.total_loss(losses, degreg, loss_config.lam)

    return ad.finite_diff_check(loss_fn, param_list, eps=eps)
