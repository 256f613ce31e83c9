"""Worst-case cost and regret traces of the online learner across seeds."""
from dataclasses import replace

import numpy as np

from hardening.dro import dynamic_regret, run_learner
from hardening.pipeline import learner_evaluator, learner_stream

from _world import load, parser


def main():
    p = parser(__doc__)
    p.add_argument("--seeds", type=int, default=10)
    args = p.parse_args()
    w = load(args)
    cfg = w["cfg"]
    ev = learner_evaluator(w["network"], w["catalog"], w["oracle"], w["model"], cfg.learner)
    traces = []
    for seed in range(args.seeds):
        opts = replace(cfg.learner, seed=seed)
        _, trace, history = run_learner(opts.T, ev, learner_stream(w["records"], opts.T, seed), opts,
                                        truth_probs=w["truth_probs"])
        d_t, bound = dynamic_regret(trace)
        W = np.array([r["worst_case_cost"] for r in history])
        G = np.array([r["regret_term"] for r in history])
        traces.append((W, G))
        blocks = W[: len(W) // 100 * 100].reshape(-1, 100).mean(axis=1)
        print(f"seed {seed}: D_T {d_t:.2f} (bound {bound:.1f}), L {trace.L:.4f}, "
              f"100-step block means {np.round(blocks, 1).tolist()}")
    T = min(len(W) for W, _ in traces)
    rows = ["t,worst_case_mean,worst_case_min,worst_case_max,regret_mean"]
    for t in range(T):
        ws = [W[t] for W, _ in traces]
        rows.append(f"{t + 1},{np.mean(ws):.6f},{np.min(ws):.6f},{np.max(ws):.6f},"
                    f"{np.mean([G[t] for _, G in traces]):.6f}")
    (w["out"] / "learner_convergence.csv").write_text("\n".join(rows) + "\n")


if __name__ == "__main__":
    main()
