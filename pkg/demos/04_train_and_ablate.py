"""
Training and the four-row ablation
==================================

Trains the full model and three stripped-down variants on the tiny preset.
The acceptance runs use the same code on synergy-small (see
``diffmsin bench``), which takes minutes rather than seconds.
"""
from diffmsin.data import build_dataset, preset
from diffmsin.experiments import ablation_study, bench_config, fit_to_data
from diffmsin.training import rela_impr, train

ds, _ = build_dataset(preset("tiny", seed=0))
cfg = fit_to_data(bench_config("tiny"), ds)

res = train(cfg, ds)
for r in res.history:
    print(f"epoch {r.epoch}: auc {r.auc:.4f}  l_y {r.l_y:.4f}  l_con {r.l_con:+.4f}  l_syn {r.l_syn:.4f}")
print("best epoch", res.best_epoch)

sweep = ablation_study(preset("tiny"), cfg, seeds=(0, 1))
print(sweep.table(reference="full"))
print("RelaImpr of full over the stripped model: "
      f"{rela_impr(sweep.mean('full'), sweep.mean('no_mfe_src_fdaf')):+.2f}%")
