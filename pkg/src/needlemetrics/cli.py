"""Command-line front end for the needle-driving kinematics pipeline.

Exit codes: 0 success, 1 hard error (bad data, missing artifacts),
2 configuration error. ``NEEDLEMETRICS_<FIELD>`` environment variables
override scalar config fields (highest precedence).
"""

import json
import sys

import click

from needlemetrics import pipeline, synth
from needlemetrics.config import ConfigError, load_config
from needlemetrics.ingest import calibrate_endpoint, load_trial


def _build_config(config_path, **overrides):
    return load_config(config_path, overrides=overrides)


def _run_stage(fn, *args):
    try:
        fn(*args)
    except ConfigError as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(2)
    except Exception as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(1)


_shared = [
    click.option("--config", "config_path", type=click.Path(exists=True),
                 default=None, help="YAML config file."),
    click.option("--condition", type=click.Choice(["teleoperated", "open"]),
                 default=None),
    click.option("--manifest", type=click.Path(), default=None),
    click.option("--overrides", type=click.Path(), default=None,
                 help="Manual boundary override CSV."),
    click.option("--calibration", type=click.Path(), default=None,
                 help="Calibration recording CSV or model JSON (open)."),
    click.option("--out", "out_dir", type=click.Path(), default=None),
    click.option("--seed", type=int, default=None),
    click.option("--jobs", type=int, default=None),
]


def _with_shared(fn):
    for opt in reversed(_shared):
        fn = opt(fn)
    return fn


@click.group()
def main():
    """Kinematic skill metrics for needle-driving trials."""


def _stage_command(name, stage):
    @main.command(name=name, help=stage.__doc__)
    @_with_shared
    def command(config_path, **overrides):
        def go():
            config = _build_config(config_path, **overrides)
            stage(config)

        _run_stage(go)

    return command


def _run_all(config):
    """Run every pipeline stage: ingest, segment, metrics, stats, report."""
    pipeline.run_pipeline(config)


_stage_command("run", _run_all)
_stage_command("ingest", pipeline.stage_ingest)
_stage_command("segment", pipeline.stage_segment)
_stage_command("metrics", pipeline.stage_metrics)
_stage_command("stats", pipeline.stage_stats)
_stage_command("report", pipeline.stage_report)


@main.command()
@click.argument("recording", type=click.Path(exists=True))
@click.option("--out", "out_path", type=click.Path(), default="calibration.json")
def calibrate(recording, out_path):
    """Estimate tracker lever arms from a calibration recording."""

    def go():
        frames = load_trial(recording, "open")
        model = calibrate_endpoint(frames)
        with open(out_path, "w") as fh:
            json.dump(model.to_dict(), fh, indent=1, sort_keys=True)
        click.echo(f"wrote {out_path} (residual RMS {model.residual_rms:.3g} mm)")

    _run_stage(go)


@main.command(name="synth")
@click.option("--condition", type=click.Choice(["teleoperated", "open"]),
              required=True)
@click.option("--out", "out_dir", type=click.Path(), required=True)
@click.option("--seed", type=int, default=0)
@click.option("--cohort/--single", default=False,
              help="Full cohort (manifest + trials) or one trial.")
@click.option("--experienced", type=int, default=6, show_default=True)
@click.option("--novice", type=int, default=9, show_default=True)
@click.option("--trials", type=int, default=80, show_default=True)
@click.option("--pos-noise", type=float, default=0.1, show_default=True,
              help="Position noise, mm RMS.")
@click.option("--orient-noise", type=float, default=0.002, show_default=True,
              help="Orientation noise, rad RMS.")
def synth_command(condition, out_dir, seed, cohort, experienced, novice, trials,
                  pos_noise, orient_noise):
    """Generate ground-truth synthetic recordings."""

    def go():
        import os

        os.makedirs(out_dir, exist_ok=True)
        if cohort:
            entries = synth.cohort_scripts(
                condition, n_experienced=experienced, n_novice=novice,
                n_trials=trials, seed=seed,
                pos_noise_mm=pos_noise, orient_noise_rad=orient_noise,
            )
            manifest = synth.write_cohort(entries, out_dir, seed=seed)
            click.echo(f"wrote {len(entries)} trials; manifest at {manifest}")
            return
        script = synth.TrialScript(
            condition=condition,
            pos_noise_mm=pos_noise, orient_noise_rad=orient_noise,
            phi_base_rad=0.0 if condition == "teleoperated" else 0.15,
        )
        if condition == "open":
            script.transport_legs = [([-152.0, -20.0, -10.0], 1.5)]
        trial = synth.generate_trial(script, seed=seed)
        path = os.path.join(out_dir, "trial.csv")
        if condition == "teleoperated":
            synth.write_teleoperated_csv(path, trial.raw)
        else:
            synth.write_open_csv(path, trial.raw)
        synth.write_sidecar(os.path.join(out_dir, "trial.truth.json"), trial.sidecar)
        click.echo(f"wrote {path}")

    _run_stage(go)


if __name__ == "__main__":
    main()
