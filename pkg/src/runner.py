#!/usr/bin/env python3
"""
Experiment Runner

Loads data, builds the network, dispatches to the selected training method
and writes run artifacts (metrics CSV, checkpoint, resolved config, traces).
"""

from dataclasses import dataclass, field, replace
from pathlib import Path

from modules.baseline.backprop import sgd_adam_baseline_train
from modules.block_admm.batch import batch_admm_train
from modules.block_admm.online import online_train
from modules.blocks.block import Block, split_network
from modules.blocks.layers import Linear, build_mlp
from modules.blocks.model import Model, evaluate
from modules.data.checkpoint import load_model, save_model
from modules.data.config import TrainConfig
from modules.data.dataset import Dataset, load_npz, save_npz, stratified_subset
from modules.data.idx import load_idx
from modules.data.metrics import MetricsRecord, write_metrics_csv, write_summary_csv
from modules.data.synth import synth_gen, train_test_split
from modules.errors import ConfigError
from modules.nmf.facto import build_facto_blocks, deepfacto_train, write_scores_csv
from modules.schedule.penalty import TraceRow, convergence_mode_train, write_trace_csv
from modules.standard_admm.train import standard_admm_train, to_blocks
from modules.tensor.ops import Rng


@dataclass
class RunResult:
    method: str
    seed: int
    model: Model
    records: list[MetricsRecord]
    trace: list[TraceRow] = field(default_factory=list)


class ExperimentRunner:
    """Runs one configuration; every random draw comes from one seeded Rng."""

    def __init__(self, config: TrainConfig, out_dir: Path):
        self.config = config
        self.out_dir = Path(out_dir)

    def load_data(
        self, rng: Rng, config: TrainConfig | None = None
    ) -> tuple[Dataset, Dataset | None]:
        cfg = config or self.config
        if cfg.dataset == "idx":
            train = load_idx(cfg.data_file(cfg.train_images), cfg.data_file(cfg.train_labels))
            test = load_idx(
                cfg.data_file(cfg.test_images), cfg.data_file(cfg.test_labels), split="test"
            )
        elif cfg.dataset == "npz":
            if not cfg.train_npz:
                raise ConfigError("dataset=npz needs train_npz")
            train = load_npz(cfg.data_file(cfg.train_npz))
            test = load_npz(cfg.data_file(cfg.test_npz)) if cfg.test_npz else None
        else:
            data = synth_gen(cfg.synth_spec(), rng)
            if cfg.synth_test > 0:
                train, test = train_test_split(data, cfg.synth_test, rng)
            else:
                train, test = data, None

        if cfg.train_subset:
            train = stratified_subset(train, cfg.train_subset, rng)
        if test is not None and cfg.test_subset:
            test = stratified_subset(test, cfg.test_subset, rng)
        return train, test

    def _check_fit(self, cfg: TrainConfig, train: Dataset):
        if train.X.shape[0] != cfg.layers[0] or train.n_classes != cfg.layers[-1]:
            raise ConfigError(
                f"layers {cfg.layers} do not fit data with {train.X.shape[0]} features "
                f"and {train.n_classes} classes"
            )

    def build_blocks(self, rng: Rng, config: TrainConfig | None = None) -> list[Block]:
        cfg = config or self.config
        layers = build_mlp(
            cfg.layers, rng, bias=cfg.bias, init=cfg.init, activation=cfg.activation
        )
        linear_positions = [i for i, layer in enumerate(layers) if isinstance(layer, Linear)]
        if cfg.boundaries:
            bounds = [linear_positions[b] for b in cfg.boundaries]
        else:
            bounds = linear_positions[1:]
        return split_network(layers, bounds)

    def run(self, method: str | None = None, seed: int | None = None) -> RunResult:
        """Train one method and return its model and per-epoch records."""
        method = method or self.config.method
        seed = self.config.seed if seed is None else seed
        cfg = replace(self.config, method=method, seed=seed).validate()
        rng = Rng(seed)
        train, test = self.load_data(rng, cfg)
        self._check_fit(cfg, train)

        print(f"🚀 Training {method} (seed {seed}) on {train.n_samples} samples")
        trace: list[TraceRow] = []
        if method == "block-admm":
            blocks = self.build_blocks(rng, cfg)
            _, records = batch_admm_train(blocks, train, cfg.batch_config(), rng, test)
            model = Model(blocks)
        elif method == "online":
            blocks = self.build_blocks(rng, cfg)
            _, records = online_train(blocks, train, cfg.online_config(), rng, test)
            model = Model(blocks)
        elif method == "standard-admm":
            state, records = standard_admm_train(
                train, cfg.layers, cfg.standard_config(), rng, test
            )
            model = Model(to_blocks(state))
        elif method in ("sgd", "adam"):
            layers = build_mlp(
                cfg.layers, rng, bias=cfg.bias, init=cfg.init, activation=cfg.activation
            )
            model, records = sgd_adam_baseline_train(
                layers, train, cfg.baseline_config(method), rng, test
            )
        elif method == "deepfacto":
            facto = cfg.facto_config()
            blocks = build_facto_blocks(
                cfg.layers, facto.rank, facto.position, rng, bias=cfg.bias, init=cfg.init
            )
            result = deepfacto_train(blocks, train, cfg.batch_config(), facto, rng, test)
            model, records = Model(blocks, result.nmf), result.records
        else:
            blocks = self.build_blocks(rng, cfg)
            _, records, trace = convergence_mode_train(
                blocks,
                train,
                cfg.batch_config(),
                cfg.schedule(),
                cfg.convergence_config(),
                rng,
                test,
            )
            model = Model(blocks)

        final = records[-1]
        print(
            f"✅ {method}: test accuracy {final.test_accuracy:.4f} "
            f"after {final.epoch} epochs ({final.wall_clock_seconds:.2f}s training)"
        )
        return RunResult(method, seed, model, records, trace)

    def train(self) -> RunResult:
        """Run the configured method and write its artifacts to out_dir."""
        result = self.run()
        self.out_dir.mkdir(parents=True, exist_ok=True)
        write_metrics_csv(self.out_dir / "metrics.csv", result.records)
        save_model(self.out_dir / "model.ckpt", result.model)
        (self.out_dir / "config.env").write_text(self.config.to_env_text(), encoding="utf-8")
        if result.trace:
            write_trace_csv(self.out_dir / "trace.csv", result.trace)
        print(f"📊 Artifacts written to {self.out_dir}")
        return result

    def bench(self, repeats: int = 1) -> dict[str, list[RunResult]]:
        """Each configured method with seeds seed .. seed + repeats - 1."""
        if repeats < 1:
            raise ConfigError(f"repeats must be >= 1, got {repeats}")
        results: dict[str, list[RunResult]] = {}
        for method in self.config.methods:
            for offset in range(repeats):
                result = self.run(method, self.config.seed + offset)
                results.setdefault(method, []).append(result)
                name = f"{method}.csv" if repeats == 1 else f"{method}_seed{result.seed}.csv"
                write_metrics_csv(self.out_dir / name, result.records)

        write_summary_csv(
            self.out_dir / "summary.csv",
            {method: [r.records for r in runs] for method, runs in results.items()},
        )
        print("\n" + "=" * 50)
        print("📊 Bench summary")
        for method, runs in results.items():
            accs = [r.records[-1].test_accuracy for r in runs]
            mean = sum(accs) / len(accs)
            print(f"  {method:<14} final accuracy {mean:.4f} over {len(runs)} run(s)")
        print("=" * 50)
        return results

    def _eval_split(self) -> Dataset:
        train, test = self.load_data(Rng(self.config.seed))
        return test if test is not None else train

    def evaluate(self, checkpoint: Path) -> float:
        """Accuracy of a saved model on the configured test split (train if none)."""
        model = load_model(checkpoint)
        data = self._eval_split()
        loss, acc = evaluate(model, data, self.config.loss)
        print(f"📊 {checkpoint}: accuracy {acc:.4f}, loss {loss:.6f} on {data.n_samples} samples")
        return acc

    def nmf_project(self, checkpoint: Path) -> Path:
        """Write the non-negative scores of the configured data to scores.csv."""
        model = load_model(checkpoint)
        if model.nmf is None:
            raise ConfigError(f"{checkpoint} has no NMF insert")
        data = self._eval_split()
        path = self.out_dir / "scores.csv"
        write_scores_csv(path, model.scores(data.X))
        print(f"✅ Scores for {data.n_samples} samples written to {path}")
        return path

    def gen_synth(self) -> list[Path]:
        """Generate the configured synthetic set and save it as .npz files."""
        rng = Rng(self.config.seed)
        data = synth_gen(self.config.synth_spec(), rng)
        paths = []
        if self.config.synth_test > 0:
            train, test = train_test_split(data, self.config.synth_test, rng)
            paths.append(self.out_dir / "synth_test.npz")
            save_npz(paths[-1], test)
        else:
            train = data
        paths.insert(0, self.out_dir / "synth_train.npz")
        save_npz(paths[0], train)
        print(f"✅ {self.config.synth_kind}: {data.n_samples} samples written to {self.out_dir}")
        return paths
