"""Online learner against RO, SP and static DRO over repeated scenario trials."""
from hardening.pipeline import learner_stream, run_strategies, trial_report

from _world import load, parser


def main():
    args = parser(__doc__).parse_args()
    w = load(args)
    cfg = w["cfg"]
    stream = learner_stream(w["records"], cfg.learner.T, cfg.learner.seed)
    strategies, _, _ = run_strategies(w["network"], w["catalog"], w["oracle"], w["model"], w["truth_probs"],
                                      cfg.learner, stream, cfg.solver.harden_semantics, cfg.dro_radius)
    report = trial_report(strategies, w["oracle"], w["truth_probs"], cfg.n_trials, cfg.n_scen, cfg.trial_seed,
                          cfg.percentile)
    (w["out"] / "comparison.csv").write_text(report.to_csv())
    for r in report.rows():
        print(f"{r['strategy']:>8}: mean {r['mean_kwh']:.2f} kWh  [{r['lo_kwh']:.2f}, {r['hi_kwh']:.2f}]  "
              f"{strategies[r['strategy']].as_dict(w['network'])}")


if __name__ == "__main__":
    main()
