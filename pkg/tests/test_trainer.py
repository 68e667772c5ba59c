import io
import json
from pathlib import Path

import numpy as np
import pytest

from drain.config import load_config
from drain.data import DomainDataset, make_drifting_regression, make_rotated_moons
from drain.generator import GeneratorConfig
from drain.netgraph import NetSchema, param_count
from drain.trainer import (
    TrainConfig, TrainingDivergedError, jsonl_sink, load_model, new_run, predict_future,
    save_model, train_on_domain, train_sequence,
)

CONFIGS = Path(__file__).resolve().parents[1] / "configs"
SMALL = NetSchema.mlp(2, [4], 1, "relu", "sigmoid")


def small_gen(schema=SMALL, **kw):
    base = dict(target_param_count=param_count(schema), latent_dim=4, lstm_depth=2, lam=0.1, tau=2,
                encoder_hidden=4, decoder_hidden=4, init_hidden=4)
    base.update(kw)
    return GeneratorConfig(**base)


def small_moons(T=3, n=40, seed=0):
    return make_rotated_moons(num_domains=T, n_per_domain=n, seed=seed)


def test_single_iteration_is_one_adam_step():
    state, prefix = new_run(SMALL, small_gen(), TrainConfig(iters_per_domain=1))
    cfg = TrainConfig(iters_per_domain=1)
    opt = cfg.make_optimizer()
    res = train_on_domain(state, prefix, SMALL, small_moons()[0], cfg, opt)
    assert opt.t == 1 and len(res.loss_curve) == 1


def test_history_gets_realized_omega():
    cfg = TrainConfig(iters_per_domain=3)
    state, prefix = new_run(SMALL, small_gen(), cfg)
    for s, ds in enumerate(small_moons()):
        res = train_on_domain(state, prefix, SMALL, ds, cfg)
        assert state.step_index == s + 1
        assert state.history[-1].tobytes() == res.omega.tobytes()
        assert state.last_omega.tobytes() == res.omega.tobytes()
    assert len(state.history) == 2


def test_committed_config_improves_loss_on_first_moons_domain():
    cfg = load_config(CONFIGS / "moons.toml")
    ds = make_rotated_moons(seed=cfg.seeds[0], **cfg.dataset.params)[0]
    tcfg = cfg.train_config(cfg.seeds[0])
    state, prefix = new_run(cfg.schema, cfg.generator, tcfg)
    curve = train_on_domain(state, prefix, cfg.schema, ds, tcfg).loss_curve
    assert len(curve) == tcfg.iters_per_domain
    assert np.all(np.isfinite(curve))
    assert curve[-1] < curve[0]


def test_single_domain_sequence():
    cfg = TrainConfig(iters_per_domain=5)
    model = train_sequence(small_moons(T=1), SMALL, small_gen(), cfg)
    assert model.num_domains == 1 and len(model.omega_sequence[0]) == param_count(SMALL)


def test_adam_steps_equal_domains_times_iters():
    cfg = TrainConfig(iters_per_domain=4)
    model = train_sequence(small_moons(T=3), SMALL, small_gen(), cfg)
    assert model.optimizer_steps == 3 * 4
    assert [len(c) for c in model.loss_curves] == [4, 4, 4]


class LoggedDomains:
    """Sequence wrapper recording which domain is read while each phase runs."""

    def __init__(self, domains):
        self.domains = domains
        self.events = []

    def __len__(self):
        return len(self.domains)

    def __getitem__(self, k):
        self.events.append(("read", k))
        return self.domains[k]

    def sink(self, record):
        if record["iter"] == 0:
            self.events.append(("phase", record["phase"]))


def test_phase_reads_only_its_own_domain():
    logged = LoggedDomains(small_moons(T=4))
    train_sequence(logged, SMALL, small_gen(), TrainConfig(iters_per_domain=2), logged.sink)
    phase = None
    reads = []
    for kind, k in logged.events:
        if kind == "phase":
            phase = k
        else:
            reads.append((phase, k))
    # each read happens right before its own phase starts and never ahead of it
    assert [k for _, k in reads] == [0, 1, 2, 3]
    for prev_phase, k in reads:
        assert prev_phase is None or k == prev_phase + 1


def test_rejects_unordered_domains():
    ds = small_moons(T=3)
    with pytest.raises(ValueError, match="ordered"):
        train_sequence([ds[1], ds[0]], SMALL, small_gen(), TrainConfig(iters_per_domain=1))


def test_rejects_dimension_mismatch():
    ds = make_drifting_regression(num_domains=1, n=10, dim=3)
    with pytest.raises(ValueError, match="features"):
        train_sequence(ds, SMALL, small_gen(), TrainConfig(iters_per_domain=1))


def test_divergence_reports_phase_and_iteration():
    schema = NetSchema.mlp(1, [], 1, output_activation="identity")
    x = np.ones((4, 1))
    ds = [DomainDataset(x, np.full(4, 1e300), 0, "regression")]
    with pytest.raises(TrainingDivergedError, match="phase 0, iteration 0"):
        train_sequence(ds, schema, small_gen(schema), TrainConfig(iters_per_domain=3, task="regression"))


def test_predict_future_is_pure_and_sized():
    model = train_sequence(small_moons(), SMALL, small_gen(), TrainConfig(iters_per_domain=3))
    before = model.generator_state.copy()
    a, b = predict_future(model), predict_future(model)
    assert a.values.tobytes() == b.values.tobytes()
    assert len(a) == param_count(SMALL)
    after = model.generator_state
    assert after.step_index == before.step_index
    assert all(after.params[k].tobytes() == before.params[k].tobytes() for k in before.params)
    assert len(after.history) == len(before.history)


def test_training_is_deterministic(tmp_path):
    def run(path):
        buf = io.StringIO()
        model = train_sequence(small_moons(), SMALL, small_gen(), TrainConfig(iters_per_domain=5, seed=3),
                               jsonl_sink(buf))
        save_model(path, model)
        return path.read_bytes(), buf.getvalue()

    assert run(tmp_path / "a.ckpt") == run(tmp_path / "b.ckpt")


def test_metrics_records_shape():
    buf = io.StringIO()
    train_sequence(small_moons(T=2), SMALL, small_gen(), TrainConfig(iters_per_domain=3), jsonl_sink(buf))
    records = [json.loads(line) for line in buf.getvalue().splitlines()]
    assert len(records) == 6
    assert records[0].keys() == {"phase", "iter", "loss"}
    assert [(r["phase"], r["iter"]) for r in records] == [(p, i) for p in range(2) for i in range(3)]


def test_model_checkpoint_roundtrip(tmp_path):
    schema = NetSchema.mlp(2, [4, 3], 1, generated_suffix_len=1)
    model = train_sequence(small_moons(), schema, small_gen(schema), TrainConfig(iters_per_domain=3))
    assert model.prefix_params.size > 0
    save_model(tmp_path / "m.ckpt", model)
    back = load_model(tmp_path / "m.ckpt")
    assert back.schema == schema
    assert back.prefix_params.tobytes() == model.prefix_params.tobytes()
    assert [w.tobytes() for w in back.omega_sequence] == [w.tobytes() for w in model.omega_sequence]
    assert predict_future(back).values.tobytes() == predict_future(model).values.tobytes()
    assert back.domain_indices == [0, 1, 2] and back.optimizer_steps == 9


def test_prefix_layers_are_trained():
    schema = NetSchema.mlp(2, [4, 3], 1, generated_suffix_len=1)
    cfg = TrainConfig(iters_per_domain=3)
    _, prefix0 = new_run(schema, small_gen(schema), cfg)
    model = train_sequence(small_moons(T=2), schema, small_gen(schema), cfg)
    assert not np.array_equal(prefix0, model.prefix_params)


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(learning_rate=0)
    with pytest.raises(ValueError):
        TrainConfig(iters_per_domain=0)
    with pytest.raises(ValueError):
        TrainConfig(task="ranking")


def test_generator_size_must_match_schema():
    with pytest.raises(ValueError, match="parameters"):
        new_run(SMALL, small_gen(NetSchema.mlp(2, [5])), TrainConfig())
