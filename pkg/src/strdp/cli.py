"""Command-line front end.

    strdp transfer   --content c.png --style s.png [--strength 0.5] [-o out]
    strdp sweep      --strengths 0.1,0.3,0.5,0.7,0.9 ...
    strdp ablate     ...
    strdp metrics    --content c.png --style s.png img1.png img2.png ...
    strdp init-model [-o out]

Exit status: 0 success, 1 configuration error, 2 runtime error.
"""
import argparse
import csv
import io
import json
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from . import plotting
from .codec import make_codec
from .config import parse_config, require_paths
from .denoiser import Denoiser, DenoiserConfig
from .errors import ConfigError, StrdpError
from .metrics import FeatureExtractor, content_loss, gram_style_loss, psnr, ssim
from .pipeline import ABLATION_LETTERS, Engine, TransferJob, run_style_transfer
from .schedule import build_schedule
from .serialization import (load_container, load_module_entries, module_entries,
                            quantize, read_image, save_container, write_image)

log = logging.getLogger("strdp")

CSV_COLUMNS = ("job_id", "S", "style_loss", "content_loss", "psnr", "ssim")
DEFAULT_STRENGTHS = "0.1,0.3,0.5,0.7,0.9"


def build_engine(cfg) -> Engine:
    sc = cfg.schedule
    schedule = build_schedule(sc["T"], sc["beta_start"], sc["beta_end"], sc["train_steps"],
                              sc["beta_schedule"])
    cc = cfg.codec
    if cc["codec"] == "toy":
        codec = make_codec("toy", factor=cc["factor"], latent_channels=cc["latent_channels"],
                           hidden=cc["hidden"], seed=cc["seed"])
    else:
        codec = make_codec("identity")
    dc = cfg.denoiser
    dcfg = DenoiserConfig(latent_channels=codec.latent_channels, base_channels=dc["base_channels"],
                          levels=dc["levels"], groups=dc["groups"], temb_dim=dc["temb_dim"],
                          weight_std=dc["weight_std"])
    denoiser = Denoiser(dcfg, seed=dc["seed"])
    if dc["weights"]:
        entries = load_container(dc["weights"])
        load_module_entries(denoiser, entries, "denoiser")
        if cc["codec"] == "toy" and any(k.startswith("codec.") for k in entries):
            load_module_entries(codec, entries, "codec")
    return Engine(schedule, codec, denoiser)


def _job(cfg, content, style, **changes):
    j = cfg.job
    params = dict(strength=j["S"], seed=j["seed"], mode=j["mode"], trajectory=j["trajectory"],
                  match_colors=j["match_colors"])
    params.update(changes)
    return TransferJob(content, style, **params)


def _write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _metric_row(job_id, S, image, content, style, fe):
    return {
        "job_id": job_id,
        "S": S,
        "style_loss": gram_style_loss(image, style, fe),
        "content_loss": content_loss(image, content, fe),
        "psnr": psnr(image, content),
        "ssim": ssim(image, content),
    }


def _write_csv(rows, fh):
    writer = csv.DictWriter(fh, fieldnames=CSV_COLUMNS, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: ("" if row[k] is None else
                             f"{row[k]:.10g}" if isinstance(row[k], float) else row[k])
                         for k in CSV_COLUMNS})


def _map(fn, items, workers):
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            return list(pool.map(fn, items))
    return [fn(x) for x in items]


def _base_report(cfg, command):
    return {"command": command, "config": cfg.as_dict(), "config_hash": cfg.digest()}


def cmd_transfer(cfg, args, out):
    require_paths(cfg, "content", "style")
    engine = build_engine(cfg)
    content, style = read_image(cfg.job["content"]), read_image(cfg.job["style"])
    image, rep = run_style_transfer(_job(cfg, content, style), engine,
                                    keep_latents=args.dump_latents)
    latents = rep.pop("latents", None)
    write_image(out / "stylized.png", image)
    plotting.image_row([content, style, image], ["content", "style", f"S={cfg.job['S']:g}"],
                       out / "comparison.png")
    if latents is not None:
        entries = [(f"style_trajectory.{t:03d}", z) for t, z in enumerate(latents["style_trajectory"])]
        entries += [("content_noised", latents["content_noised"]), ("result", latents["result"])]
        save_container(out / "latents.strd", entries)
    report = _base_report(cfg, "transfer")
    report.update(rep)
    _write_json(out / "report.json", report)
    log.info("wrote %s (T'=%d)", out / "stylized.png", rep["T_prime"])


def _parse_strengths(text):
    try:
        values = [float(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise ConfigError(f"bad --strengths list {text!r}") from None
    if not values:
        raise ConfigError("--strengths is empty")
    return values


def cmd_sweep(cfg, args, out):
    require_paths(cfg, "content", "style")
    engine = build_engine(cfg)
    content, style = read_image(cfg.job["content"]), read_image(cfg.job["style"])
    strengths = _parse_strengths(args.strengths)
    jobs = [_job(cfg, content, style, strength=S) for S in strengths]
    fe = FeatureExtractor()

    def run(job):
        image, rep = run_style_transfer(job, engine)
        name = f"s_{job.strength:.2f}"
        write_image(out / f"{name}.png", image)
        stored = quantize(image)
        return _metric_row(name, job.strength, stored, content, style, fe), rep

    results = _map(run, jobs, args.workers)
    rows = [r for r, _ in results]
    with open(out / "sweep.csv", "w", newline="") as fh:
        _write_csv(rows, fh)
    plotting.sweep_figure(rows, out / "sweep.png")
    report = _base_report(cfg, "sweep")
    report["runs"] = [rep for _, rep in results]
    _write_json(out / "report.json", report)


def cmd_ablate(cfg, args, out):
    require_paths(cfg, "content", "style")
    engine = build_engine(cfg)
    content, style = read_image(cfg.job["content"]), read_image(cfg.job["style"])
    letters = sorted(ABLATION_LETTERS)

    def run(letter):
        image, rep = run_style_transfer(_job(cfg, content, style, mode=letter), engine)
        write_image(out / f"mode_{letter}.png", image)
        return image, rep

    results = _map(run, letters, args.workers)
    plotting.image_row([content, style] + [img for img, _ in results],
                       ["content", "style"] + [f"({k})" for k in letters],
                       out / "ablation_grid.png", width_per_panel=1.6)
    report = _base_report(cfg, "ablate")
    report["runs"] = {f"mode_{k}": rep for k, (_, rep) in zip(letters, results)}
    reverse = {k: rep["timings"]["reverse"] for k, (_, rep) in zip(letters, results)}
    report["reverse_seconds"] = reverse
    report["wct_slower_than_adain"] = reverse["d"] > reverse["a"]
    _write_json(out / "report.json", report)


def cmd_metrics(cfg, args, out):
    require_paths(cfg, "content", "style")
    content, style = read_image(cfg.job["content"]), read_image(cfg.job["style"])
    strengths = _parse_strengths(args.strengths) if args.strengths else [None] * len(args.images)
    if len(strengths) != len(args.images):
        raise ConfigError("--strengths must list one value per image")
    fe = FeatureExtractor()
    rows = [_metric_row(Path(p).stem, S, read_image(p), content, style, fe)
            for p, S in zip(args.images, strengths)]
    if args.csv:
        with open(args.csv, "w", newline="") as fh:
            _write_csv(rows, fh)
    else:
        buf = io.StringIO()
        _write_csv(rows, buf)
        sys.stdout.write(buf.getvalue())


def cmd_init_model(cfg, args, out):
    engine = build_engine(cfg)
    entries = module_entries(engine.denoiser, "denoiser")
    if cfg.codec["codec"] == "toy":
        entries += module_entries(engine.codec, "codec")
    save_container(out / "model.strd", entries)
    report = _base_report(cfg, "init-model")
    report["entries"] = len(entries)
    _write_json(out / "report.json", report)


COMMANDS = {
    "transfer": cmd_transfer,
    "sweep": cmd_sweep,
    "ablate": cmd_ablate,
    "metrics": cmd_metrics,
    "init-model": cmd_init_model,
}


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value config file")
    common.add_argument("--content", help="content PNG")
    common.add_argument("--style", help="style PNG")
    common.add_argument("--strength", "-S", type=float, help="strength S in [0, 1]")
    common.add_argument("--steps", "-T", type=int, help="DDIM step count T")
    common.add_argument("--seed", type=int, help="job seed")
    common.add_argument("--codec", choices=("identity", "toy"))
    common.add_argument("--mode", help="strdp | adain_on_noise | adain_on_latent | "
                                       "wct_features | plain_reconstruct | a-d")
    common.add_argument("--trajectory", choices=("iterative", "direct"))
    common.add_argument("--weights", help="STRD1 weights container from init-model")
    common.add_argument("--output", "-o", help="output directory")
    common.add_argument("--workers", type=int, default=1)
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="strdp", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("transfer", parents=[common], help="stylize one image")
    p.add_argument("--match-colors", action="store_true", default=None,
                   help="histogram-match the result to the style image")
    p.add_argument("--dump-latents", action="store_true",
                   help="write latents.strd with the trajectory and final latent")
    p = sub.add_parser("sweep", parents=[common], help="one transfer per strength")
    p.add_argument("--strengths", default=DEFAULT_STRENGTHS)
    sub.add_parser("ablate", parents=[common], help="AdaIN placement ablation, modes a-d")
    p = sub.add_parser("metrics", parents=[common], help="CSV metrics for stylized images")
    p.add_argument("images", nargs="+")
    p.add_argument("--strengths", help="S value per image, comma separated")
    p.add_argument("--csv", help="write CSV here instead of stdout")
    sub.add_parser("init-model", parents=[common], help="write seeded weights container")
    return parser


def _overrides(args):
    return {
        ("job", "content"): args.content,
        ("job", "style"): args.style,
        ("job", "S"): args.strength,
        ("job", "seed"): args.seed,
        ("job", "mode"): args.mode,
        ("job", "trajectory"): args.trajectory,
        ("job", "match_colors"): getattr(args, "match_colors", None),
        ("job", "output"): args.output,
        ("schedule", "T"): args.steps,
        ("codec", "codec"): args.codec,
        ("denoiser", "weights"): args.weights,
    }


def dispatch(command, cfg, args) -> int:
    out = Path(cfg.job["output"])
    try:
        if args.workers < 1:
            raise ConfigError("--workers must be >= 1")
        if command != "metrics":
            out.mkdir(parents=True, exist_ok=True)
        COMMANDS[command](cfg, args, out)
    except ConfigError as exc:
        log.error("config error: %s", exc)
        return 1
    except (StrdpError, OSError) as exc:
        log.error("error: %s", exc)
        return 2
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = parse_config(args.config, _overrides(args))
    except ConfigError as exc:
        log.error("config error: %s", exc)
        return 1
    return dispatch(args.command, cfg, args)


if __name__ == "__main__":
    sys.exit(main())
