"""Train a small model on one year of synthetic load and backtest two weeks.

Runs in about a minute on one core:

    python3 demos/quickstart.py [out_dir]
"""

import datetime as dt
import sys
from pathlib import Path

from hybridload import evaluation as ev
from hybridload.data import SynthConfig, synth_generate, synth_signal
from hybridload.train import CorrectionPolicy, TrainConfig, fit, save_checkpoint

out = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_out")
out.mkdir(parents=True, exist_ok=True)

synth = SynthConfig(years=1, seed=3)
series, signal = synth_generate(synth), synth_signal(synth)
test_start = dt.date(2019, 10, 1)
print(f"{len(series)} hourly rows, {len(series.holidays)} holidays, testing from {test_start}")

# a narrow network with few epochs keeps this fast; full size is d=10, n_h=128
config = TrainConfig(seed=1, max_epochs_offline=20, n_clusters=8, batch_size=32)
ckpt = fit(series, test_start, config, d=6, n_h=16)
save_checkpoint(ckpt, out / "model.json")
print(f"trained {len(ckpt.history) - 1} epochs, checkpoint at {out / 'model.json'}")

report = ev.backtest(ckpt, series, test_start, CorrectionPolicy(), n_days=14)
ev.write_report(report, out, "quickstart")
naive = ev.seasonal_naive(series, test_start, n_days=14)
ideal = ev.ideal_forecast(series, signal, test_start, n_days=14)
print(f"model          MAPE {report.aggregate.mape:.3f}%  RMSE {report.aggregate.rmse:.1f} MW")
print(f"seasonal naive MAPE {naive.mape:.3f}%")
print(f"noise floor    MAPE {ideal.mape:.3f}%")
print(f"report, CSVs and plots in {out}/")
