import subprocess
import sys

import pytest

from escgcn.cli import main
from escgcn.config import ModelConfig
from escgcn.data import parse_corpus, write_corpus
from escgcn.synthetic import generate_synthetic, preset

SMALL = ("d_word=8 d_ner=4 d_pos=4 d_position=4 d_h=6 attn_size=6 heads=2 gcn_size=6 ffnn_size=6 "
         "entity_attn_size=6 epochs=2 batch_size=8").split()


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    write_corpus(generate_synthetic(preset("sdp", n_instances=20), 1), d / "train.txt")
    write_corpus(generate_synthetic(preset("sdp", n_instances=10), 2), d / "dev.txt")
    assert main(["train", "--train", str(d / "train.txt"), "--dev", str(d / "dev.txt"), "--checkpoint",
                 str(d / "m.ckpt"), "--seed", "3", "--k", "full", "--log", str(d / "log.txt"), "--set", *SMALL]) == 0
    return d


def test_train_writes_checkpoint_and_log(workdir):
    assert (workdir / "m.ckpt").exists()
    assert (workdir / "log.txt").read_text().startswith("epoch=1 loss=")


def test_eval_and_predict(workdir, capsys):
    assert main(["eval", "--checkpoint", str(workdir / "m.ckpt"), "--test", str(workdir / "dev.txt")]) == 0
    assert "distance" in capsys.readouterr().out
    out = workdir / "pred.tsv"
    assert main(["predict", "--checkpoint", str(workdir / "m.ckpt"), "--test", str(workdir / "dev.txt"),
                 "--output", str(out), "--export-attention", str(workdir / "att")]) == 0
    assert len(out.read_text().splitlines()) == 10
    assert any((workdir / "att").iterdir())


def test_graph_dump(workdir, capsys):
    first = parse_corpus(workdir / "dev.txt")[0]
    assert main(["graph", "dump", "--test", str(workdir / "dev.txt"), "--k", "0", "--id", first.id]) == 0
    out = capsys.readouterr().out
    assert out.startswith(f"# id={first.id}\nk=0\n") and "A_tilde" in out


def test_synth_and_synthetic_config_training(tmp_path):
    conf = tmp_path / "syn.cfg"
    conf.write_text("preset=one_hop\nn_instances=16\n")
    assert main(["synth", "--synthetic-config", str(conf), "--out", str(tmp_path / "s.txt")]) == 0
    assert len(parse_corpus(tmp_path / "s.txt")) == 16
    cfg = tmp_path / "model.cfg"
    cfg.write_text(ModelConfig().replace(**{k: int(v) for k, v in (s.split("=") for s in SMALL)}).to_text())
    assert main(["train", "--synthetic-config", str(conf), "--config", str(cfg), "--checkpoint",
                 str(tmp_path / "m.ckpt"), "--ablate", "no_bilstm"]) == 0


def test_datasize(workdir, capsys):
    assert main(["datasize", "--train", str(workdir / "train.txt"), "--dev", str(workdir / "dev.txt"),
                 "--fractions", "1.0", "--set", *SMALL]) == 0
    assert capsys.readouterr().out.startswith("fraction\tsize\tdev_metric\n1.00\t20\t")


def test_gradcheck_command(capsys):
    assert main(["gradcheck", "--count", "2", "--seed", "4"]) == 0
    assert "max_rel_err=" in capsys.readouterr().out


@pytest.mark.parametrize("argv,code", [
    ([], 1),
    (["train"], 1),
    (["train", "--checkpoint", "x", "--train", "/nonexistent/train.txt"], 2),
    (["eval", "--checkpoint", "/nonexistent.ckpt", "--test", "t"], 2),
    (["train", "--checkpoint", "x", "--k", "-1"], 1),
    (["train", "--checkpoint", "x", "--set", "bogus=1"], 1),
    (["train", "--checkpoint", "x", "--ablate", "no_such"], 1),
    (["gradcheck", "--count", "0"], 1),
])
def test_exit_codes(argv, code, capsys):
    assert main(argv) == code


def test_bad_corpus_is_data_error(tmp_path, capsys):
    bad = tmp_path / "bad.txt"
    bad.write_text("# subj=1-1 obj=2-2 relation=r\n1\ta\tN\tO\t2\tdep\n2\tb\tN\tO\t1\tdep\n")
    assert main(["graph", "dump", "--test", str(bad)]) == 2
    assert "bad.txt:1" in capsys.readouterr().err


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_numerical_failure_exit_code(workdir):
    code = main(["train", "--train", str(workdir / "train.txt"), "--checkpoint", str(workdir / "x.ckpt"),
                 "--set", *SMALL, "lr=1e300", "grad_clip=0"])
    assert code == 3


def test_module_entry_point():
    r = subprocess.run([sys.executable, "-m", "escgcn"], capture_output=True, text=True)
    assert r.returncode == 1 and "usage" in r.stderr
