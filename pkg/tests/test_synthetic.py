import pytest

from escgcn.errors import ConfigError
from escgcn.graph import DepTree, multi_sdp_nodes
from escgcn.synthetic import (
    entity_distance, generate_synthetic, load_synthetic_config, preset, trigger_lexicon, trigger_position,
)


@pytest.mark.parametrize("name", ["sdp", "one_hop", "off_path"])
def test_presets_generate_valid_trees(name):
    cfg = preset(name, n_instances=40)
    insts = generate_synthetic(cfg, 3)
    assert len(insts) == 40
    for inst in insts:
        inst.validate()
        assert cfg.length_min <= inst.n <= cfg.length_max
        assert cfg.distance_min <= entity_distance(inst) <= cfg.distance_max + 2


def test_seeded_generation_is_reproducible():
    cfg = preset("one_hop", n_instances=10)
    assert generate_synthetic(cfg, 5) == generate_synthetic(cfg, 5)
    assert generate_synthetic(cfg, 5) != generate_synthetic(cfg, 6)


@pytest.mark.parametrize("name,dist", [("sdp", 0), ("one_hop", 1), ("off_path", 2)])
def test_trigger_distance_from_entity_path(name, dist):
    cfg = preset(name, n_instances=30)
    words = {w for ws in trigger_lexicon(cfg).values() for w in ws}
    for inst in generate_synthetic(cfg, 1):
        if inst.relation == cfg.negative_label:
            continue
        t = trigger_position(inst, cfg)
        assert t is not None and inst.tokens[t - 1] in words
        tree = DepTree(inst.head)
        path = multi_sdp_nodes(tree, inst.spans())
        d, v = 0, t
        while v not in path:
            v, d = tree.parent(v), d + 1
        assert d == dist


def test_config_text_and_validation():
    cfg = load_synthetic_config("preset=off_path\nn_instances=7\n# comment\n")
    assert cfg.trigger_mode == "off_path" and cfg.n_instances == 7
    with pytest.raises(ConfigError):
        load_synthetic_config("n_instances")
    with pytest.raises(ConfigError):
        preset("nope")
    with pytest.raises(ConfigError):
        generate_synthetic(preset("sdp", length_min=4, length_max=5), 1)


def test_one_hop_preset_places_trigger_between_and_decoys_outside():
    cfg = preset("one_hop", n_instances=40)
    lex = {w for ws in trigger_lexicon(cfg).values() for w in ws}
    for inst in generate_synthetic(cfg, 2):
        lo = min(inst.subj_span[1], inst.obj_span[1])
        hi = max(inst.subj_span[0], inst.obj_span[0])
        t = trigger_position(inst, cfg)
        if inst.relation != cfg.negative_label:
            assert lo < t < hi
        decoys = [i for i, w in enumerate(inst.tokens, start=1) if w in lex and i != t]
        assert decoys and all(not lo < i < hi for i in decoys)
