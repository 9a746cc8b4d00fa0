import numpy as np
import pytest

from escgcn.autodiff import Tensor
from escgcn.checkpoint import Checkpoint
from escgcn.config import ABLATION_FLAGS, ModelConfig, parse_overrides
from escgcn.data import build_vocabs
from escgcn.errors import ConfigError
from escgcn.gradcheck import model_gradient_check
from escgcn.head import PROB_FLOOR, ClampCounter, is_regularized, loss
from escgcn.model import ModelParams, collate, encode_instance, forward

TINY = dict(d_word=4, d_ner=2, d_pos=2, d_position=2, d_h=3, attn_size=4, heads=2, gcn_size=4, ffnn_size=4,
            entity_attn_size=3, position_clip=3, rel_clip=2, dropout=0.0)


def build(tiny_instances, **kw):
    cfg = ModelConfig(**{**TINY, **kw})
    vocabs = build_vocabs(tiny_instances)
    params = ModelParams.init(cfg, vocabs, np.random.default_rng(0))
    batch = collate([encode_instance(i, vocabs, cfg) for i in tiny_instances], cfg.position_clip)
    return cfg, vocabs, params, batch


def test_config_validation_and_text_round_trip():
    with pytest.raises(ConfigError):
        ModelConfig(d_h=0)
    with pytest.raises(ConfigError):
        ModelConfig(dropout=1.0)
    with pytest.raises(ConfigError):
        ModelConfig().with_ablations(["no_such_flag"])
    cfg = ModelConfig(prune_k=None, no_bilstm=True, lr=0.25)
    assert ModelConfig.from_text(cfg.to_text()) == cfg
    assert parse_overrides(["prune_k=full", "heads=2", "no_bilstm=yes"]) == {
        "prune_k": None, "heads": 2, "no_bilstm": True}
    assert sum(ModelConfig(attn_size=130, heads=3).head_widths) == 130


def test_loss_hand_value_and_clamp():
    probs = Tensor(np.array([[0.25, 0.75], [0.5, 0.5]]))
    J = loss(probs, np.array([1, 0]))
    assert float(J.data) == pytest.approx(-(np.log(0.75) + np.log(0.5)) / 2)
    counter = ClampCounter()
    J = loss(Tensor(np.array([[1.0, 0.0]])), np.array([1]), counter=counter)
    assert counter.count == 1 and float(J.data) == pytest.approx(-np.log(PROB_FLOOR))


def test_l2_excludes_embeddings_and_biases():
    assert is_regularized("gcn.0.W", Tensor(np.ones((2, 2))))
    assert not is_regularized("gcn.0.b", Tensor(np.ones(2)))
    assert not is_regularized("emb.word", Tensor(np.ones((2, 2))))


def test_forward_shapes_and_normalization(tiny_instances):
    cfg, vocabs, params, batch = build(tiny_instances)
    out = forward(params, batch, cfg)
    B, n = batch.words.shape
    assert out.probs.shape == (B, len(vocabs.relations))
    np.testing.assert_allclose(out.probs.data.sum(axis=1), 1.0, atol=1e-12)
    np.testing.assert_allclose(out.alpha.data.sum(axis=1), 1.0, atol=1e-12)
    assert np.all(out.alpha.data[~batch.mask] == 0)
    assert len(out.attentions) == cfg.heads


def test_padding_invariance(tiny_instances):
    cfg, vocabs, params, _ = build(tiny_instances)
    alone = collate([encode_instance(tiny_instances[0], vocabs, cfg)], cfg.position_clip)
    batched = collate([encode_instance(i, vocabs, cfg) for i in tiny_instances], cfg.position_clip)
    p1 = forward(params, alone, cfg).probs.data[0]
    p2 = forward(params, batched, cfg).probs.data[0]
    np.testing.assert_allclose(p1, p2, atol=1e-12)


@pytest.mark.parametrize("flag", ABLATION_FLAGS)
def test_each_ablation_runs_and_drops_parameters(tiny_instances, flag):
    cfg, _, full, _ = build(tiny_instances)
    acfg, _, params, batch = build(tiny_instances, **{flag: True})
    out = forward(params, batch, acfg)
    np.testing.assert_allclose(out.probs.data.sum(axis=1), 1.0, atol=1e-12)
    if flag == "no_self_attention":
        assert not any(k.startswith("attn.") for k in params.tensors) and out.s is None
    if flag == "no_bilstm":
        assert "lstm.fwd.W" not in params.tensors
    if flag == "no_entity_aware":
        assert out.alpha is None
    if flag == "no_residual_simplify":
        assert "attn.ff.W1" in params.tensors and "attn.ff.W1" not in full.tensors


def test_whole_model_gradient(tiny_instances):
    cfg = ModelConfig(**{**TINY, "dropout": 0.3, "beta": 1e-2})
    assert model_gradient_check(cfg, tiny_instances, seed=1, max_coords=6) < 1e-4


def test_checkpoint_round_trip(tmp_path, tiny_instances):
    cfg, vocabs, params, batch = build(tiny_instances)
    ck = Checkpoint(cfg, vocabs, params, epoch=3, best_metric=0.5, extra={"note": 1})
    path = tmp_path / "m.ckpt"
    ck.save(path)
    back = Checkpoint.load(path)
    assert back.config == cfg and back.epoch == 3 and back.extra == {"note": 1}
    for name, t in params.tensors.items():
        assert np.array_equal(back.params.tensors[name].data, t.data)
    a = forward(params, batch, cfg).probs.data
    b = forward(back.params, batch, back.config).probs.data
    assert np.array_equal(a, b)


def test_uniform_prediction_loss_is_log_label_count():
    J = loss(Tensor(np.full((3, 5), 0.2)), np.array([0, 3, 4]))
    assert float(J.data) == pytest.approx(np.log(5), abs=1e-12)


def test_zero_classifier_gives_uniform_distribution(tiny_instances):
    cfg, vocabs, params, batch = build(tiny_instances)
    params.tensors["cls.W"].data[...] = 0.0
    probs = forward(params, batch, cfg).probs.data
    np.testing.assert_allclose(probs, 1.0 / len(vocabs.relations), atol=1e-15)
