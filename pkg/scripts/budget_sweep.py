"""Final worst-case expected unserved load and hardening mix across budgets."""
from dataclasses import replace

from hardening.dro import run_learner
from hardening.pipeline import learner_evaluator, learner_stream

from _world import load, parser


def main():
    p = parser(__doc__)
    p.add_argument("--budgets", type=float, nargs="+")
    args = p.parse_args()
    w = load(args)
    cfg, net = w["cfg"], w["network"]
    rows = ["budget,worst_case_kwh,pl_miles,ud_miles,pd_count,budget_used"]
    for b in args.budgets or cfg.sweep_budgets:
        opts = replace(cfg.learner, budget=float(b))
        ev = learner_evaluator(net, w["catalog"], w["oracle"], w["model"], opts)
        h, _, history = run_learner(opts.T, ev, learner_stream(w["records"], opts.T, opts.seed), opts,
                                    truth_probs=w["truth_probs"])
        s = h.summary(net)
        rows.append(f"{b:g},{history[-1]['worst_case_cost']:.6f},{s['pl_miles']:.6f},{s['ud_miles']:.6f},"
                    f"{s['pd_count']},{s['budget_used']:.6f}")
        print(rows[-1])
    (w["out"] / "budget_sweep.csv").write_text("\n".join(rows) + "\n")


if __name__ == "__main__":
    main()
