"""End-to-end experiment plumbing shared by the CLI and the acceptance suite.

Randomness is derived from ``cfg.seed`` through fixed child-stream indices,
so a config file fully determines every artifact of a run.
"""
from dataclasses import dataclass
import hashlib
import logging
from pathlib import Path
import time

import numpy as np

from . import classifier as cls_mod
from . import data, latent, metrics, nn
from .denoiser import ConvDenoiser, train as train_denoiser
from .errors import ConfigError, ContractError, SizeError
from .numerics import RngStream
from .samplers import SamplerConfig, sample
from .schedule import NoiseSchedule, make_schedule

log = logging.getLogger(__name__)

# child-stream indices off the experiment seed
S_MODEL_INIT, S_MODEL_TRAIN, S_AE_INIT, S_AE_TRAIN, S_CLS, S_SAMPLE, S_METRIC = range(1, 8)


def schedule_of(cfg):
    sc = cfg.schedule
    return make_schedule(sc.kind, sc.T, sc.beta_start, sc.beta_end)


def load_data(cfg):
    """``{"train": Dataset, "test": Dataset}`` from a preset or a directory."""
    ds = cfg.dataset
    if ds.preset is not None:
        if ds.preset not in data.PRESETS:
            raise ConfigError(f"unknown dataset preset {ds.preset!r}; known: {sorted(data.PRESETS)}")
        return data.build_dataset(data.PRESETS[ds.preset], slides_per_class=ds.slides_per_class)
    root = Path(ds.path)
    if (root / "train").is_dir():
        out = {"train": data.load_dataset(root / "train")}
        if (root / "test").is_dir():
            out["test"] = data.load_dataset(root / "test")
        return out
    return {"train": data.load_dataset(root)}


# ---------------------------------------------------------------------------
# models and checkpoints
# ---------------------------------------------------------------------------

@dataclass
class ModelBundle:
    kind: str
    net: ConvDenoiser
    schedule: NoiseSchedule
    ae: latent.Autoencoder = None
    train_shape: tuple = None
    losses: list = None

    def generate(self, sampler_cfg, class_label, n, rng, batch_size=64, trace=None):
        if self.kind == "LDM":
            return latent.ldm_pipeline(self.ae, self.net, self.schedule, sampler_cfg, class_label, n,
                                       rng, batch_size=batch_size, trace=trace)
        return sample(self.net, self.schedule, sampler_cfg, class_label, n, rng,
                      batch_size=batch_size, trace=trace)


def train_ae_from_config(cfg, images):
    ac = cfg.model.ae
    root = RngStream(cfg.seed)
    ae = latent.Autoencoder.create(root.child(S_AE_INIT), images.shape[3], ac.width,
                                   ac.latent_channels, ac.vq_codes, np.dtype(ac.precision))
    opt = nn.Adam(lr=ac.lr)
    epochs = max(1, -(-ac.train_steps * ac.batch_size // max(len(images), 1)))
    res = latent.train_ae(ae, images, opt, epochs, root.child(S_AE_TRAIN), ac.batch_size,
                          max_steps=ac.train_steps)
    latent.fit_latent_scale(ae, images)
    return ae, res


def train_model(cfg, train_ds, ae=None):
    """Train the configured model; LDM trains its autoencoder first unless one is given."""
    mc = cfg.model
    s = schedule_of(cfg)
    root = RngStream(cfg.seed)
    images, labels = train_ds.images, train_ds.labels
    n_classes = int(train_ds.manifest.get("classes", int(labels.max()) + 1))
    if mc.kind == "LDM":
        if ae is None:
            ae, _ = train_ae_from_config(cfg, images)
        x = latent.encode_dataset(ae, images)
    else:
        x = images
    net = ConvDenoiser.create(x.shape[3], n_classes, root.child(S_MODEL_INIT), mc.width,
                              mc.n_layers, mc.temb_dim, dtype=np.dtype(mc.precision))
    opt = nn.Adam(lr=mc.lr, lr_final=mc.lr_final, decay_steps=mc.train_steps)
    epochs = max(1, -(-mc.train_steps * mc.batch_size // max(len(x), 1)))
    res = train_denoiser(net, x, labels, s, opt, mc.p_uncond, epochs, root.child(S_MODEL_TRAIN),
                         batch_size=mc.batch_size, max_steps=mc.train_steps)
    return ModelBundle(mc.kind, net, s, ae, tuple(images.shape[1:]), res.step_losses)


def untrained_model(cfg, train_ds, ae=None):
    """The model exactly as initialized for training, with no optimizer steps."""
    mc = cfg.model
    s = schedule_of(cfg)
    n_classes = int(train_ds.manifest.get("classes", int(train_ds.labels.max()) + 1))
    ch = ae.latent_channels if mc.kind == "LDM" else train_ds.images.shape[3]
    net = ConvDenoiser.create(ch, n_classes, RngStream(cfg.seed).child(S_MODEL_INIT), mc.width,
                              mc.n_layers, mc.temb_dim, dtype=np.dtype(mc.precision))
    return ModelBundle(mc.kind, net, s, ae, tuple(train_ds.images.shape[1:]))


def ae_tensors(ae):
    t = {f"ae/{k}": v for k, v in ae.params.items()}
    if ae.codebook is not None:
        t["ae/codebook"] = ae.codebook.vectors
        t["ae/codebook_usage"] = ae.codebook.usage
    return t


def ae_from_checkpoint(ckpt):
    conf = ckpt.metadata["ae"]
    ae = latent.Autoencoder(conf["channels"], conf["width"], conf["latent_channels"])
    ae.params = {k[3:]: np.array(v) for k, v in ckpt.tensors.items()
                 if k.startswith("ae/") and not k.startswith("ae/codebook")}
    ae.scale = float(conf["scale"])
    if "ae/codebook" in ckpt.tensors:
        ae.codebook = latent.VQCodebook(np.array(ckpt.tensors["ae/codebook"]),
                                        np.array(ckpt.tensors["ae/codebook_usage"]))
    return ae


def ae_checkpoint(ae):
    return data.Checkpoint(ae_tensors(ae), {"component": "ae", "ae": ae.config()})


def model_checkpoint(bundle):
    tensors = {f"denoiser/{k}": v for k, v in bundle.net.params.items()}
    meta = {"component": "denoiser", "model_kind": bundle.kind,
            "denoiser": bundle.net.config(), "schedule": bundle.schedule.to_dict(),
            "n_classes": bundle.net.n_classes, "train_shape": list(bundle.train_shape)}
    if bundle.ae is not None:
        tensors.update(ae_tensors(bundle.ae))
        meta["ae"] = bundle.ae.config()
    return data.Checkpoint(tensors, meta)


def model_from_checkpoint(ckpt):
    meta = ckpt.metadata
    if meta.get("component") != "denoiser":
        raise ContractError(f"checkpoint holds a {meta.get('component')!r}, not a denoiser")
    net = ConvDenoiser(**meta["denoiser"])
    net.params = {k[len("denoiser/"):]: np.array(v) for k, v in ckpt.tensors.items()
                  if k.startswith("denoiser/")}
    ae = ae_from_checkpoint(ckpt) if "ae" in meta else None
    return ModelBundle(meta["model_kind"], net, NoiseSchedule.from_dict(meta["schedule"]), ae,
                       tuple(meta["train_shape"]))


def classifier_checkpoint(net):
    return data.Checkpoint(cls_mod.classifier_to_tensors(net),
                           {"component": "classifier", "classifier": net.config()})


def classifier_from_checkpoint(ckpt):
    if ckpt.metadata.get("component") != "classifier":
        raise ContractError(f"checkpoint holds a {ckpt.metadata.get('component')!r}, not a classifier")
    return cls_mod.classifier_from_tensors(ckpt.tensors, ckpt.metadata["classifier"])


# ---------------------------------------------------------------------------
# sampling and evaluation
# ---------------------------------------------------------------------------

def generate_per_class(bundle, sampler_cfg, n_classes, n_per_class, seed, size=None):
    """``n_per_class`` samples for every class; class ``k`` uses stream ``(seed, k)``."""
    if size is not None:
        sampler_cfg = SamplerConfig(**{**sampler_cfg.to_dict(), "target_size": (size, size)})
    root = RngStream(seed).child(S_SAMPLE)
    imgs = [bundle.generate(sampler_cfg, k, n_per_class, root.child(k)) for k in range(n_classes)]
    labels = np.repeat(np.arange(n_classes), n_per_class)
    return np.concatenate(imgs), labels


def make_extractor(kind, cls_net=None, input_size=32, seed=0):
    if kind == "classifier":
        if cls_net is None:
            raise ContractError("the classifier extractor needs a trained classifier")
        return cls_mod.ClassifierFeatures(cls_net)
    if kind == "randproj":
        return cls_mod.RandomProjection(input_size=input_size, seed=seed)
    raise ConfigError(f"unknown extractor {kind!r}")


def evaluate_sets(real, gen, extractor, metric="both", kid_cfg=None, seed=0):
    fr, fg = extractor(real), extractor(gen)
    out = {"n_real": int(len(fr)), "n_gen": int(len(fg)), "extractor": extractor.name}
    if metric in ("fid", "both"):
        out["fid"] = metrics.fid_from_features(fr, fg)
    if metric in ("kid", "both"):
        kc = kid_cfg or metrics.KIDConfig()
        m = min(kc.subset_size, len(fr), len(fg))
        kc = metrics.KIDConfig(kc.degree, kc.gamma, kc.coef, m, kc.n_subsets)
        out["kid_mean"], out["kid_std"] = metrics.kid(fr, fg, kc,
                                                     RngStream(seed).child(S_METRIC))
    return out


def _subset(x, n, rng):
    return x[np.sort(rng.permutation(len(x))[:n])] if len(x) > n else x


def ordering_string(accs):
    """``{"A": .9, "B": .9, "C": .5}`` -> ``"A = B > C"`` (stable for ties)."""
    keys = sorted(accs, key=lambda k: -accs[k])
    out = keys[0]
    for prev, k in zip(keys, keys[1:]):
        out += (" = " if accs[k] == accs[prev] else " > ") + k
    return out


def run_toy_experiment(cfg, size_factors=(0.5, 0.75, 1.0, 1.25, 1.5), n_triplet_per_class=None,
                       out_dir=None):
    """Train, sample and evaluate on a toy preset; returns a JSON-ready report.

    The report holds the real-vs-real and real-vs-untrained FIDs, the FID
    at every sampling size, and the three triplet classifier reports. When
    ``out_dir`` is given, the training-size samples are written there.
    """
    timings = {}
    t0 = time.process_time()
    splits = load_data(cfg)
    train_ds, test_ds = splits["train"], splits["test"]
    K = int(train_ds.manifest["classes"])
    timings["data"] = time.process_time() - t0

    t0 = time.process_time()
    cls_net, _ = cls_mod.train_classifier(train_ds.images, train_ds.labels, K, cfg.classifier,
                                          RngStream(cfg.seed).child(S_CLS))
    real_acc = cls_mod.evaluate(cls_net, test_ds.images, test_ds.labels).overall_accuracy
    P = train_ds.images.shape[1]
    ext = make_extractor(cfg.metrics.extractor, cls_net, P, cfg.seed)
    timings["classifier"] = time.process_time() - t0

    t0 = time.process_time()
    bundle = train_model(cfg, train_ds)
    timings["train"] = time.process_time() - t0

    n = cfg.metrics.n_per_class
    ref = test_ds.images
    pick = RngStream(cfg.seed).child(S_METRIC).child(1)
    real_sub = _subset(train_ds.images, n * K, pick)

    def fid_of(x):
        return metrics.fid_from_features(ext(ref), ext(x))

    t0 = time.process_time()
    report = {"config": cfg.to_dict(), "classifier_test_accuracy": real_acc,
              "fid_real_vs_real": fid_of(real_sub)}
    untrained = untrained_model(cfg, train_ds, bundle.ae)
    g0, _ = generate_per_class(untrained, cfg.sampler, K, n, cfg.seed, P)
    report["fid_real_vs_untrained"] = fid_of(g0)

    sizes = {}
    main_samples = None
    for f in size_factors:
        size = int(round(P * f))
        size -= size % 4 if bundle.kind == "LDM" else 0
        try:
            g, gl = generate_per_class(bundle, cfg.sampler, K, n, cfg.seed, size)
        except SizeError as e:
            # e.g. an LDM latent below the denoiser's minimum extent
            sizes[str(size)] = {"factor": f, "fid": None, "unsupported": str(e)}
            continue
        sizes[str(size)] = {"factor": f, "fid": fid_of(g)}
        if size == P:
            main_samples = (g, gl)
    report["fid_by_size"] = sizes
    timings["sample_sweep"] = time.process_time() - t0

    if main_samples is not None:
        report["sample_sha256"] = hashlib.sha256(data.to_uint8(main_samples[0]).tobytes()).hexdigest()

    t0 = time.process_time()
    if n_triplet_per_class is None:
        n_triplet_per_class = cfg.metrics.triplet_per_class
    if n_triplet_per_class:
        gx, gy = generate_per_class(bundle, cfg.sampler, K, n_triplet_per_class, cfg.seed + 1, P)
        reports = cls_mod.run_triplet((train_ds.images, train_ds.labels), (gx, gy),
                                      (test_ds.images, test_ds.labels), cfg.classifier,
                                      RngStream(cfg.seed).child(S_CLS))
        report["triplet"] = {k: r.to_dict() for k, r in reports.items()}
        accs = {k: r.overall_accuracy for k, r in reports.items()}
        report["triplet_ordering"] = ordering_string(accs)
    timings["triplet"] = time.process_time() - t0
    report["cpu_seconds"] = timings

    if out_dir is not None and main_samples is not None:
        out = Path(out_dir)
        data.save_dataset(out / "samples", main_samples[0], main_samples[1],
                          data.dataset_manifest(K, 0.0, 0.0, P, len(main_samples[0]), cfg.seed,
                                                source="generated"))
        data.write_json(out / "report.json", report)
    return report, bundle
