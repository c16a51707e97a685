import pytest

from xmodal.cli import read_config, run
from xmodal.protocol import EvalReport
from xmodal.store import read_corpus

SMALL_SYNTH = ["--n-identities", "8", "--samples", "4", "--face-dim", "6", "--voice-dim", "5", "--latent-dim", "3"]
FAST_TRAIN = ["--epochs", "2", "--hidden-dim", "16", "--out-dim", "4", "--P", "3", "--K", "2"]


def _ok(argv):
    assert run([str(a) for a in argv]) == 0


@pytest.fixture
def corpus(tmp_path):
    path = tmp_path / "c.csv"
    _ok(["synth", "--seed", 7, "--shift", 1.0, *SMALL_SYNTH, "--out", path])
    return path


class TestUsage:
    def test_empty_argv(self, capsys):
        assert run([]) != 0
        assert "usage" in capsys.readouterr().err

    def test_unknown_flag_single_line(self, tmp_path, capsys):
        assert run(["synth", "--bogus", "--out", str(tmp_path / "x")]) != 0
        err = capsys.readouterr().err
        assert err.count("\n") == 1 and "--bogus" in err

    def test_missing_file(self, tmp_path, capsys):
        assert run(["split", "--corpus", str(tmp_path / "none.csv"), "--lang", "E", "--out", str(tmp_path / "s")]) == 1
        assert capsys.readouterr().err.count("\n") == 1

    def test_missing_out(self, capsys):
        assert run(["synth"]) != 0
        assert "--out" in capsys.readouterr().err

    def test_invariant_violation(self, tmp_path, capsys):
        assert run(["synth", "--sigma", "-1", "--out", str(tmp_path / "c.csv")]) == 1
        assert "nonnegative" in capsys.readouterr().err


class TestSynth:
    def test_byte_identical(self, tmp_path, corpus):
        again = tmp_path / "again.csv"
        _ok(["synth", "--seed", 7, "--shift", 1.0, *SMALL_SYNTH, "--out", again])
        assert corpus.read_bytes() == again.read_bytes()
        assert len(read_corpus(corpus)) == 8 * 2 * 2 * 4

    def test_manifest_written_and_replayable(self, tmp_path, corpus):
        manifest = tmp_path / "c.csv.manifest"
        cfg = read_config(manifest)
        assert cfg["seed"] == "7" and cfg["shift"] == "1.0" and cfg["command"] == "synth"
        replay = tmp_path / "replay.csv"
        _ok(["synth", "--config", manifest, "--out", replay])
        assert replay.read_bytes() == corpus.read_bytes()

    def test_flag_overrides_config(self, tmp_path, corpus):
        other = tmp_path / "other.csv"
        _ok(["synth", "--config", tmp_path / "c.csv.manifest", "--seed", 8, "--out", other])
        assert other.read_bytes() != corpus.read_bytes()
        assert read_config(tmp_path / "other.csv.manifest")["seed"] == "8"

    def test_config_errors(self, tmp_path, capsys):
        bad = tmp_path / "bad.cfg"
        bad.write_text("no_such_key = 1\n")
        assert run(["synth", "--config", str(bad), "--out", str(tmp_path / "x")]) != 0
        bad.write_text("command = train\n")
        assert run(["synth", "--config", str(bad), "--out", str(tmp_path / "x")]) != 0
        assert "manifest for 'train'" in capsys.readouterr().err


def test_full_pipeline(tmp_path, corpus):
    before = corpus.read_bytes()
    split, model, ver = tmp_path / "s.json", tmp_path / "m.txt", tmp_path / "ver.csv"
    _ok(["split", "--corpus", corpus, "--lang", "E", "--n-test", 3, "--seed", 1, "--out", split])
    _ok(["train", "--corpus", corpus, "--split", split, *FAST_TRAIN, "--out", model])
    assert (tmp_path / "m.txt.history.csv").read_text().startswith("epoch,mean_loss,active_fraction\n")
    _ok(["eval-ver", "--corpus", corpus, "--split", split, "--checkpoint", model, "--out", ver])
    rows = EvalReport.from_csv(ver.read_text()).rows
    assert [(r.test_lang, r.heard, r.metric) for r in rows] == [("E", True, "eer"), ("U", False, "eer")]

    sid, top1 = tmp_path / "sid.json", tmp_path / "id.csv"
    _ok(["split", "--corpus", corpus, "--lang", "E", "--kind", "speaker_identification", "--out", sid])
    _ok(["eval-id", "--corpus", corpus, "--split", sid, "--epochs", 20, "--out", top1])

    merged = tmp_path / "all.csv"
    _ok(["report", ver, top1, "--out", merged])
    metrics = [r.metric for r in EvalReport.from_csv(merged.read_text()).rows]
    assert metrics == ["eer", "eer", "top1", "top1", "eer_pct_increase", "top1_pct_decrease"]
    assert corpus.read_bytes() == before

    # every stage reruns byte-identically from its manifest
    for out in (split, model, ver, top1, merged):
        manifest = tmp_path / f"{out.name}.manifest"
        command = read_config(manifest)["command"]
        replay = tmp_path / f"replay-{out.name}"
        _ok([command, "--config", manifest, "--out", replay])
        assert replay.read_bytes() == out.read_bytes(), out.name


def test_eval_ver_needs_checkpoint_for_cross_modal(tmp_path, corpus, capsys):
    split = tmp_path / "s.json"
    _ok(["split", "--corpus", corpus, "--lang", "E", "--n-test", 3, "--out", split])
    assert run(["eval-ver", "--corpus", str(corpus), "--split", str(split), "--out", str(tmp_path / "r")]) != 0
    assert "--checkpoint" in capsys.readouterr().err


def test_speaker_verification_without_model(tmp_path, corpus):
    split, rep = tmp_path / "sv.json", tmp_path / "sv.csv"
    _ok(["split", "--corpus", corpus, "--lang", "E", "--kind", "speaker_verification", "--n-test", 4, "--out", split])
    _ok(["eval-ver", "--corpus", corpus, "--split", split, "--pair-policy", "balanced", "--out", rep])
    assert {r.kind for r in EvalReport.from_csv(rep.read_text()).rows} == {"speaker_verification"}
