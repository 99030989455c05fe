"""Show the weekly output-layer correction tracking a sudden +10% load step.

The same trained model is backtested twice on a series whose level jumps on
1 March: once frozen and once with weekly fine-tuning of the output layer.

    python3 demos/level_shift.py
"""

import datetime as dt

from hybridload import evaluation as ev
from hybridload.data import SynthConfig, synth_generate
from hybridload.model import OUTPUT
from hybridload.train import CorrectionPolicy, TrainConfig, fit

shift = dt.date(2020, 3, 1)
synth = SynthConfig(years=2, seed=4, level_shift=(shift, 1000.0))
series = synth_generate(synth)
test_start = dt.date(2020, 1, 1)

ckpt = fit(series, test_start, TrainConfig(seed=1, max_epochs_offline=20, n_clusters=8), d=6, n_h=16)
frozen = ev.backtest(ckpt, series, test_start, CorrectionPolicy(mode="none"), n_days=120)
tuned = ev.backtest(ckpt, series, test_start, CorrectionPolicy(mode="fine-tune-output"), n_days=120)

print(f"level step of +1000 MW on {shift}")
print(f"frozen model     MAPE {frozen.aggregate.mape:.3f}%")
print(f"weekly fine-tune MAPE {tuned.aggregate.mape:.3f}%  ({len(tuned.corrections)} corrections)")
print("day         frozen  tuned")
for a, b in list(zip(frozen.days, tuned.days))[50:80:3]:
    print(f"{a.date}  {a.metrics.mape:6.2f}  {b.metrics.mape:6.2f}")
moved = [k for k in ckpt.params if (tuned.final_checkpoint.params[k] != ckpt.params[k]).any()]
print(f"parameters changed by correction: {', '.join(moved)} (output layer is {', '.join(OUTPUT)})")
