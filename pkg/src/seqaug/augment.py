"""End-to-end augmentation: build the training pairs, fit the diffusion
augmentor, generate M pre-order items per user with the chosen strategy,
and emit a dataset that loads back through the normal ingestion path.

Strategies: the two guided-diffusion variants, uniform-random items,
random picks from the user's own sequence, the reverse-trained
autoregressive generator, or none.
"""

import hashlib
import json
import os
from dataclasses import asdict, dataclass, field

import numpy as np

from . import diffusion, srs
from . import numerics as nd
from .dataset import (EmptyDiffusionSetError, InteractionDataset,
                      build_diffusion_training_set, group_of, save_sequences,
                      save_vocab)
from .numerics import seed_stream
from .schedule import make_schedule
from .sunet import SUNet, SUNetConfig

STRATEGIES = ("diffusion_cg", "diffusion_cf", "random", "random_seq", "reverse_gen", "none")


@dataclass
class AugmentConfig:
    M: int = 6
    strategy: str = "diffusion_cf"
    gamma: float = 1.0
    schedule_family: str = "linear"
    T: int = 1000
    beta_start: float = 1e-4
    beta_end: float = 0.02
    embed_dim: int = 64
    base_width: int = 32
    levels: int = 2
    channel_mult: tuple = (1, 2)
    res_blocks: int = 2
    epochs: int = 200
    batch_size: int = 128
    lr: float = 1e-3
    p_uncond: float = 0.1
    seed: int = 1
    exclude_test: bool = True
    short_only: bool = False
    sample_batch: int = 128

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r}; expected one of {STRATEGIES}")
        if self.strategy != "none" and self.M < 1:
            raise ValueError(f"M must be >= 1 for strategy {self.strategy!r}, got {self.M}")

    def config_hash(self):
        blob = json.dumps(asdict(self), sort_keys=True, default=list).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()[:16]

    def schedule(self):
        return make_schedule(self.schedule_family, self.T, self.beta_start, self.beta_end)


@dataclass
class AugmentedDataset:
    entries: dict                 # user -> (aug_items, raw_items)
    num_items: int
    manifest: dict = field(default_factory=dict)

    def to_interactions(self, item_vocab=None):
        users = {u: list(aug) + list(raw) for u, (aug, raw) in self.entries.items()}
        return InteractionDataset(users=users, num_items=self.num_items,
                                  item_vocab=item_vocab or {})


def train_augmentor(ds, config, log=None):
    """Fit the noise predictor on (first-M, remainder) pairs from every
    sequence longer than M. Returns (model, per-epoch mean loss)."""
    pairs = build_diffusion_training_set(ds, config.M, exclude_test=config.exclude_test)
    sched = config.schedule()
    net_cfg = SUNetConfig(channels=config.M, embed_dim=config.embed_dim, levels=config.levels,
                          channel_mult=tuple(config.channel_mult), base_width=config.base_width,
                          res_blocks=config.res_blocks)
    model = SUNet(net_cfg, ds.num_items, seed_stream(config.seed, "sunet-init"))
    opt = nd.Adam(list(model.parameters().values()), lr=config.lr)
    shuffle_rng = seed_stream(config.seed, "diff-shuffle")
    draw_rng = seed_stream(config.seed, "diff-draws")
    p_uncond = config.p_uncond if config.strategy == "diffusion_cf" else 0.0

    losses = []
    order = np.arange(len(pairs))
    for epoch in range(config.epochs):
        shuffle_rng.shuffle(order)
        total, batches = 0.0, 0
        for start in range(0, len(order), config.batch_size):
            batch = [pairs[i] for i in order[start:start + config.batch_size]]
            aug_ids = np.array([b[1] for b in batch], dtype=np.int64)
            raws = [b[2] for b in batch]
            loss = diffusion.training_loss(model, aug_ids, raws, sched, draw_rng, p_uncond=p_uncond)
            model.zero_grad()
            nd.backward(loss)
            opt.step()
            total += float(loss.data)
            batches += 1
        losses.append(total / batches)
        if log:
            log(f"epoch {epoch + 1}/{config.epochs}: loss {losses[-1]:.5f}")
    return model, losses


def _conditioning_sequence(seq, exclude_test):
    s = seq[:-1] if exclude_test and len(seq) > 1 else list(seq)
    return s


def augment_dataset(ds, config, model=None, reverse_model=None, classifier=None):
    """Produce M pre-order items for every user (or only the short group
    when ``short_only``); other users keep an empty prefix."""
    entries = {}
    targets = [u for u in ds.users
               if not config.short_only or group_of(len(ds.users[u])) == "short"]
    target_set = set(targets)
    for u, seq in ds.users.items():
        if u not in target_set:
            entries[u] = ([], list(seq))
    if config.strategy == "none":
        return AugmentedDataset(entries={u: ([], list(s)) for u, s in ds.users.items()},
                                num_items=ds.num_items, manifest=_manifest(config))

    if config.strategy in ("random", "random_seq"):
        for u in targets:
            rng = seed_stream(config.seed, "aug-" + config.strategy, int(u))
            if config.strategy == "random":
                aug = [int(v) for v in rng.integers(1, ds.num_items + 1, size=config.M)]
            else:
                support = _conditioning_sequence(ds.users[u], config.exclude_test)
                aug = [int(support[i]) for i in rng.integers(0, len(support), size=config.M)]
            entries[u] = (aug, list(ds.users[u]))
    elif config.strategy == "reverse_gen":
        if reverse_model is None:
            raise ValueError("reverse_gen needs a trained reverse model")
        for u in targets:
            cond = _conditioning_sequence(ds.users[u], config.exclude_test)
            aug = srs.generate_preorder(reverse_model, cond, config.M)
            entries[u] = (aug, list(ds.users[u]))
    else:
        if model is None:
            raise ValueError(f"{config.strategy} needs a trained diffusion model")
        sched = config.schedule()
        if config.strategy == "diffusion_cg":
            guidance = diffusion.GuidanceConfig(strategy="classifier_guide",
                                                gamma=config.gamma, classifier=classifier)
        else:
            guidance = diffusion.GuidanceConfig(strategy="classifier_free", gamma=config.gamma)
        for start in range(0, len(targets), config.sample_batch):
            chunk = targets[start:start + config.sample_batch]
            raws = [_conditioning_sequence(ds.users[u], config.exclude_test) for u in chunk]
            x0_hat = diffusion.sample(model, raws, config.M, guidance, sched,
                                      seed=config.seed, user_keys=chunk)
            ids, _ = diffusion.round_to_items(x0_hat, model.item_emb.data, forbid_padding=True)
            for u, row in zip(chunk, ids):
                entries[u] = ([int(v) for v in row], list(ds.users[u]))
    return AugmentedDataset(entries=entries, num_items=ds.num_items, manifest=_manifest(config))


def _manifest(config):
    return {
        "strategy": config.strategy,
        "M": config.M,
        "gamma": config.gamma,
        "schedule": config.schedule_family,
        "T": config.T,
        "beta_start": config.beta_start,
        "beta_end": config.beta_end,
        "seed": config.seed,
        "exclude_test": config.exclude_test,
        "short_only": config.short_only,
        "config_hash": config.config_hash(),
    }


def emit(aug, out_dir, item_vocab=None):
    """Write the canonical sequence file, the provenance manifest, and the
    vocabulary sidecar when a raw-id mapping is known."""
    os.makedirs(out_dir, exist_ok=True)
    ds = aug.to_interactions(item_vocab=item_vocab)
    seq_path = os.path.join(out_dir, "sequences.tsv")
    try:
        save_sequences(ds, seq_path)
        with open(os.path.join(out_dir, "manifest.json"), "w", encoding="utf-8") as f:
            json.dump(aug.manifest, f, indent=2, sort_keys=True)
        if item_vocab:
            save_vocab(ds, os.path.join(out_dir, "vocab.tsv"))
    except OSError as exc:
        raise OSError(f"failed to write augmented dataset under {out_dir}: {exc}") from exc
    return seq_path
