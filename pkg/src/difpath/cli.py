"""Command-line entry point.

Every failure ends with one line on stderr of the form
``difpath-error kind=<kind> code=<n> message=<json string>`` and the process
exits with ``n``. Argument errors exit with 2 (argparse's convention).
"""
import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import classifier as cls_mod
from . import data, pipeline
from .config import load_config
from .errors import ContractError, DifpathError, MissingFileError
from .numerics import RngStream
from .samplers import SamplerConfig

log = logging.getLogger("difpath")


def _slides_manifest_path(root):
    return Path(root) / "slides.json"


def cmd_gen_data(a):
    out = Path(a.out)
    slides = []
    for k in range(a.classes):
        for j in range(a.slides_per_class):
            seed = data.slide_seed(a.seed, k, j)
            slide = data.generate_slide(k, seed, a.extent, a.mpp)
            rel = f"class_{k}/slide_{j}.ppm"
            data.save_ppm(out / rel, slide.raster)
            slides.append({"class": k, "index": j, "seed": seed, "file": rel})
            log.info("wrote %s", rel)
    data.write_json(_slides_manifest_path(out), {
        "classes": a.classes, "mpp": a.mpp, "extent": a.extent, "seed": a.seed,
        "slides_per_class": a.slides_per_class, "slides": slides})
    print(f"{len(slides)} slides -> {out}")


def cmd_extract(a):
    mpath = _slides_manifest_path(a.slides)
    if not mpath.exists():
        raise MissingFileError(f"no slide manifest at {mpath}")
    manifest = json.loads(mpath.read_text())
    slide_mpp = manifest["mpp"] if a.mpp is None else a.mpp
    spec = data.PatchSpec.from_fov(a.fov, a.size)
    spc = manifest["slides_per_class"]
    train_ids, _ = data.split_slides(spc)
    parts = {"train": ([], []), "test": ([], [])}
    for entry in manifest["slides"]:
        raster = data.load_ppm(Path(a.slides) / entry["file"], raw=True)
        slide = data.SyntheticSlide(entry["class"], entry["seed"], slide_mpp, raster)
        batch = data.extract_patches(slide, spec, a.stride)
        split = "train" if entry["index"] in train_ids else "test"
        parts[split][0].append(batch.images)
        parts[split][1].append(np.full(len(batch.images), entry["class"]))
    for split, (imgs, labs) in parts.items():
        x = np.concatenate(imgs) if imgs else np.zeros((0, a.size, a.size, 3))
        y = np.concatenate(labs) if labs else np.zeros(0, dtype=np.int64)
        data.save_dataset(Path(a.out) / split, x, y, data.dataset_manifest(
            manifest["classes"], slide_mpp, a.fov, a.size, len(x), manifest["seed"], split=split))
        print(f"{split}: {len(x)} patches")


def cmd_train(a):
    cfg = load_config(a.config)
    splits = pipeline.load_data(cfg)
    ae = None
    if cfg.model.kind == "LDM" and a.ae:
        ae = pipeline.ae_from_checkpoint(data.load_checkpoint(a.ae))
    bundle = pipeline.train_model(cfg, splits["train"], ae)
    data.save_checkpoint(a.out, pipeline.model_checkpoint(bundle))
    print(f"final loss {np.mean(bundle.losses[-50:]):.6f} -> {a.out}")


def cmd_train_ae(a):
    cfg = load_config(a.config)
    splits = pipeline.load_data(cfg)
    ae, res = pipeline.train_ae_from_config(cfg, splits["train"].images)
    data.save_checkpoint(a.out, pipeline.ae_checkpoint(ae))
    print(f"final loss {np.mean(res.step_losses[-50:]):.6f} -> {a.out}")


def cmd_sample(a):
    bundle = pipeline.model_from_checkpoint(data.load_checkpoint(a.ckpt))
    size = a.size if a.size is not None else bundle.train_shape[0]
    cfg = SamplerConfig(a.sampler, a.steps if a.steps is not None else
                        (50 if a.sampler == "ddim" else 1000),
                        eta=a.eta, guidance_w=a.guidance, eps_scale_s=a.scale_s,
                        target_size=(size, size))
    label = None if a.class_id is None or a.class_id < 0 else a.class_id
    rng = RngStream(a.seed).child(pipeline.S_SAMPLE).child(0 if label is None else label)
    x = bundle.generate(cfg, label, a.n, rng)
    out = Path(a.out)
    out.mkdir(parents=True, exist_ok=True)
    k = 0 if label is None else label
    data.save_dataset(out, x, np.full(len(x), k), data.dataset_manifest(
        max(k + 1, 1), 0.0, 0.0, size, len(x), a.seed, source="generated",
        sampler=cfg.to_dict(), class_label=label))
    print(f"{len(x)} samples -> {out}")


def _split_dirs(root):
    root = Path(root)
    if (root / "train").is_dir():
        return root / "train", (root / "test" if (root / "test").is_dir() else None)
    return root, None


def cmd_eval(a):
    real_train, real_test = _split_dirs(a.real)
    real = data.load_dataset(real_test or real_train)
    gen = data.load_dataset(_split_dirs(a.gen)[0])
    P = real.images.shape[1]
    cls_net = None
    if a.extractor == "classifier":
        if a.cls_ckpt:
            cls_net = pipeline.classifier_from_checkpoint(data.load_checkpoint(a.cls_ckpt))
        else:
            tr = data.load_dataset(real_train)
            cls_net, _ = cls_mod.train_classifier(tr.images, tr.labels,
                                                  rng=RngStream(a.seed).child(pipeline.S_CLS))
    ext = pipeline.make_extractor(a.extractor, cls_net, P, a.seed)
    report = pipeline.evaluate_sets(real.images, gen.images, ext, a.metric, seed=a.seed)
    data.write_json(a.out, report)
    print(json.dumps(report))


def cmd_train_cls(a):
    train_dir, test_dir = _split_dirs(a.data)
    tr = data.load_dataset(train_dir)
    net, _ = cls_mod.train_classifier(tr.images, tr.labels, int(tr.manifest["classes"]),
                                      rng=RngStream(a.seed).child(pipeline.S_CLS))
    data.save_checkpoint(a.out, pipeline.classifier_checkpoint(net))
    if test_dir is not None:
        te = data.load_dataset(test_dir)
        print(f"held-out accuracy {cls_mod.evaluate(net, te.images, te.labels).overall_accuracy:.4f}")


def cmd_eval_triplet(a):
    real_train, real_test = _split_dirs(a.real)
    if a.test:
        real_test = Path(a.test)
    if real_test is None:
        raise ContractError("no held-out real test set: give --test or a real dir with train/ and test/")
    tr, te = data.load_dataset(real_train), data.load_dataset(real_test)
    gen = data.load_dataset(_split_dirs(a.gen)[0])
    reports = cls_mod.run_triplet((tr.images, tr.labels), (gen.images, gen.labels),
                                  (te.images, te.labels),
                                  rng=RngStream(a.seed).child(pipeline.S_CLS))
    out = {k: r.to_dict() for k, r in reports.items()}
    data.write_json(a.out, out)
    for k, r in reports.items():
        print(f"{k}: {r.overall_accuracy:.4f}")


def cmd_fov(a):
    fov = data.fov_of(a.size, a.mpp)
    print(f"{a.size:g} px x {a.mpp:g} mpp = {fov:g} um")


def build_parser():
    p = argparse.ArgumentParser(prog="difpath", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="render synthetic slides")
    g.add_argument("--out", required=True)
    g.add_argument("--classes", type=int, default=5)
    g.add_argument("--slides-per-class", type=int, required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--mpp", type=float, default=data.SLIDE_MPP)
    g.add_argument("--extent", type=int, default=data.SLIDE_EXTENT)
    g.set_defaults(fn=cmd_gen_data)

    e = sub.add_parser("extract", help="tile slides into FOV patches (80/20 split by slide)")
    e.add_argument("--slides", required=True)
    e.add_argument("--fov", type=float, required=True)
    e.add_argument("--mpp", type=float, default=None, help="slide raster mpp (default: from manifest)")
    e.add_argument("--size", type=int, required=True)
    e.add_argument("--stride", type=int, default=None)
    e.add_argument("--out", required=True)
    e.set_defaults(fn=cmd_extract)

    t = sub.add_parser("train", help="train a DDPM or LDM denoiser")
    t.add_argument("--config", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--ae", default=None, help="pretrained autoencoder checkpoint for LDM")
    t.set_defaults(fn=cmd_train)

    ta = sub.add_parser("train-ae", help="train the latent autoencoder")
    ta.add_argument("--config", required=True)
    ta.add_argument("--out", required=True)
    ta.set_defaults(fn=cmd_train_ae)

    s = sub.add_parser("sample", help="generate images from a checkpoint")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--sampler", choices=("ddpm", "ddim", "eps"), required=True)
    s.add_argument("--steps", type=int, default=None)
    s.add_argument("--eta", type=float, default=0.0)
    s.add_argument("--guidance", type=float, default=0.0)
    s.add_argument("--scale-s", type=float, default=1.014)
    s.add_argument("--size", type=int, default=None)
    s.add_argument("--class", dest="class_id", type=int, default=None)
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_sample)

    ev = sub.add_parser("eval", help="FID / KID between two image directories")
    ev.add_argument("--real", required=True)
    ev.add_argument("--gen", required=True)
    ev.add_argument("--metric", choices=("fid", "kid", "both"), default="both")
    ev.add_argument("--extractor", choices=("classifier", "randproj"), default="classifier")
    ev.add_argument("--cls-ckpt", default=None)
    ev.add_argument("--seed", type=int, default=0)
    ev.add_argument("--out", required=True)
    ev.set_defaults(fn=cmd_eval)

    tc = sub.add_parser("train-cls", help="train the patch classifier")
    tc.add_argument("--data", required=True)
    tc.add_argument("--seed", type=int, default=0)
    tc.add_argument("--out", required=True)
    tc.set_defaults(fn=cmd_train_cls)

    et = sub.add_parser("eval-triplet", help="real / generated / combined classifier comparison")
    et.add_argument("--real", required=True)
    et.add_argument("--gen", required=True)
    et.add_argument("--test", default=None)
    et.add_argument("--seed", type=int, default=0)
    et.add_argument("--out", required=True)
    et.set_defaults(fn=cmd_eval_triplet)

    f = sub.add_parser("fov", help="field of view = patch size x resolution")
    f.add_argument("--size", type=float, required=True)
    f.add_argument("--mpp", type=float, required=True)
    f.set_defaults(fn=cmd_fov)
    return p


def error_line(kind, code, message):
    return f"difpath-error kind={kind} code={code} message={json.dumps(str(message))}"


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.fn(args)
    except DifpathError as e:
        print(error_line(e.kind, e.exit_code, e), file=sys.stderr)
        return e.exit_code
    except (OSError, KeyError, json.JSONDecodeError) as e:
        print(error_line("io", 1, e), file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
