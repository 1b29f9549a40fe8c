import csv

import numpy as np
import pytest

from rirphys.cli import EXIT_IO, EXIT_NUMERICAL, EXIT_OK, EXIT_VALIDATION, main
from rirphys.config import load_config
from rirphys.ctf import load_bank
from rirphys.dataset import MANIFEST_FIELDS, excitation, make_item, read_manifest, validate_row
from rirphys.room import MATCHED, REGIMES
from rirphys.stft import Waveform
from rirphys.wavio import read_wav, write_wav


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    out = tmp_path_factory.mktemp("data")
    assert main(["synth", "--out", str(out), "--count", "3", "--seed", "7", "--dry-samples", "16000"]) == 0
    return out


def rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_synth_zero_items_writes_header_only(tmp_path):
    assert main(["synth", "--out", str(tmp_path), "--count", "0"]) == EXIT_OK
    assert (tmp_path / "manifest.csv").read_text() == ",".join(MANIFEST_FIELDS) + "\n"


def test_synth_is_reproducible(tmp_path, dataset):
    assert main(["synth", "--out", str(tmp_path), "--count", "3", "--seed", "7",
                 "--dry-samples", "16000", "--jobs", "2"]) == EXIT_OK
    assert (tmp_path / "manifest.csv").read_bytes() == (dataset / "manifest.csv").read_bytes()
    for sub in ("dry", "rir", "wet"):
        a = (tmp_path / sub / "item00001.wav").read_bytes()
        assert a == (dataset / sub / "item00001.wav").read_bytes()


def test_manifest_rows_validate(dataset):
    manifest = read_manifest(dataset / "manifest.csv")
    assert [r["item_id"] for r in manifest] == ["item00000", "item00001", "item00002"]
    for row in manifest:
        validate_row(row, REGIMES)
        rir = read_wav(dataset / row["rir_path"])
        assert rir.samples[0] == 1.0
        rt60 = float(row["rt60_measured"])
        assert abs(rt60 - float(row["rt60_target"])) / float(row["rt60_target"]) < 0.35


def test_estimate_identity_pair(tmp_path):
    x = Waveform(np.random.default_rng(0).standard_normal(16000))
    write_wav(tmp_path / "x.wav", x)
    out = tmp_path / "est"
    code = main(["estimate", "--dry", str(tmp_path / "x.wav"), "--wet", str(tmp_path / "x.wav"),
                 "--out", str(out), "--filter-len", "1", "--max-residual", "1e-8"])
    assert code == EXIT_OK
    bank = load_bank(out / "bank.bin")
    np.testing.assert_allclose(bank.filters[:, 0, 0], 1.0, atol=1e-8)
    for name in ("bank.csv", "rir_estimate.csv", "residual.csv"):
        assert (out / name).exists()
    assert max(float(r["residual"]) for r in rows(out / "residual.csv")) < 1e-8


def test_estimate_from_manifest(tmp_path, dataset):
    code = main(["estimate", "--manifest", str(dataset / "manifest.csv"), "--item", "item00000",
                 "--out", str(tmp_path)])
    assert code == EXIT_OK
    assert load_bank(tmp_path / "bank.bin").n_bins == 257


def test_estimate_rank_violation_exits_2(tmp_path, capsys):
    x = Waveform(np.random.default_rng(1).standard_normal(2000))  # 9 frames
    write_wav(tmp_path / "x.wav", x)
    args = ["estimate", "--dry", str(tmp_path / "x.wav"), "--wet", str(tmp_path / "x.wav"),
            "--out", str(tmp_path / "o")]
    assert main(args + ["--filter-len", "9"]) == EXIT_VALIDATION
    assert main(args + ["--filter-len", "3", "--crossbands", "1"]) == EXIT_VALIDATION
    assert main(args + ["--filter-len", "8"]) == EXIT_OK


def test_estimate_residual_threshold_exits_4(tmp_path):
    rng = np.random.default_rng(2)
    write_wav(tmp_path / "x.wav", Waveform(rng.standard_normal(8000)))
    write_wav(tmp_path / "y.wav", Waveform(rng.standard_normal(8000)))
    code = main(["estimate", "--dry", str(tmp_path / "x.wav"), "--wet", str(tmp_path / "y.wav"),
                 "--out", str(tmp_path / "o"), "--filter-len", "2", "--max-residual", "1e-3"])
    assert code == EXIT_NUMERICAL


def test_missing_input_exits_3(tmp_path):
    code = main(["estimate", "--dry", str(tmp_path / "nope.wav"), "--wet", str(tmp_path / "nope.wav"),
                 "--out", str(tmp_path)])
    assert code == EXIT_IO
    assert main(["eval", "--manifest", str(tmp_path / "none.csv"), "--variant", "SB",
                 "--out", str(tmp_path / "m.csv")]) == EXIT_IO
    assert main(["rt60", str(tmp_path / "none.wav")]) == EXIT_IO


def test_eval_oracle_variants(tmp_path, dataset, capsys):
    for variant in ("SSB", "CSB"):
        out = tmp_path / f"{variant}.csv"
        assert main(["eval", "--manifest", str(dataset / "manifest.csv"), "--variant", variant,
                     "--out", str(out), "--summary", str(tmp_path / "s.csv")]) == EXIT_OK
        values = [float(r["value"]) for r in rows(out)]
        assert values == [0.0, 0.0, 0.0]
        assert rows(tmp_path / "s.csv")[0]["n"] == "3"
    assert "CSB: 0.000 ± 0.000 over 3 items" in capsys.readouterr().out


def test_eval_is_byte_reproducible(tmp_path, dataset):
    for name in ("a.csv", "b.csv"):
        assert main(["eval", "--manifest", str(dataset / "manifest.csv"), "--variant", "SB",
                     "--out", str(tmp_path / name)]) == EXIT_OK
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    assert all(float(r["value"]) > 0 for r in rows(tmp_path / "a.csv"))


def test_eval_edc_fourier(tmp_path, dataset):
    out = tmp_path / "m.csv"
    assert main(["eval", "--manifest", str(dataset / "manifest.csv"), "--variant", "EDC-Fourier",
                 "--out", str(out)]) == EXIT_OK
    assert all(float(r["value"]) < 1e-3 for r in rows(out))


def test_eval_with_estimates(tmp_path, dataset):
    est = tmp_path / "est"
    est.mkdir()
    for row in read_manifest(dataset / "manifest.csv"):
        dry = read_wav(dataset / row["dry_path"])
        noisy = dry.samples + 0.05 * np.random.default_rng(3).standard_normal(dry.samples.size)
        write_wav(est / f"{row['item_id']}.wav", Waveform(noisy))
    out = tmp_path / "m.csv"
    assert main(["eval", "--manifest", str(dataset / "manifest.csv"), "--variant", "SSB",
                 "--estimates", str(est), "--out", str(out)]) == EXIT_OK
    assert all(float(r["value"]) > 0 for r in rows(out))


def test_grad_check_command(capsys):
    assert main(["grad-check", "--trials", "0"]) == EXIT_OK
    assert main(["grad-check", "--trials", "2", "--seed", "1"]) == EXIT_OK
    assert "max relative FD error over 2 trials" in capsys.readouterr().out
    # 3 * 8 = 24 unknowns against 16 + 8 - 1 = 23 frames
    assert main(["grad-check", "--trials", "1", "--crossbands", "1", "--filter-len", "8"]) == EXIT_VALIDATION


def test_rt60_and_deconvolve(tmp_path, dataset, capsys):
    row = read_manifest(dataset / "manifest.csv")[0]
    assert main(["rt60", str(dataset / row["rir_path"])]) == EXIT_OK
    printed = float(capsys.readouterr().out.strip())
    assert printed == pytest.approx(float(row["rt60_measured"]), rel=1e-3)
    out = tmp_path / "h.wav"
    assert main(["deconvolve", "--wet", str(dataset / row["wet_path"]),
                 "--dry", str(dataset / row["dry_path"]), "--out", str(out)]) == EXIT_OK
    h = read_wav(out).samples
    rir = read_wav(dataset / row["rir_path"]).samples
    assert np.max(np.abs(h[:rir.size] - rir)) < 1e-3


def test_config_file_and_override(tmp_path):
    path = tmp_path / "run.toml"
    path.write_text(
        "seed = 5\n"
        "[stft]\nwin_len = 256\nhop = 128\n"
        "[ctf]\ncrossbands = 1\nfilter_len = 4\n"
        "[regime]\nname = 'mismatched'\n"
    )
    cfg = load_config(path)
    assert (cfg.seed, cfg.stft.win_len, cfg.crossbands, cfg.filter_len) == (5, 256, 1, 4)
    assert cfg.regime.name == "mismatched"
    cfg = load_config(path, seed=9, filter_len=None, win_len=128, hop=64)
    assert (cfg.seed, cfg.filter_len, cfg.stft.win_len, cfg.stft.fft_len) == (9, 4, 128, 128)
    path.write_text("[ctf]\nbogus = 1\n")
    with pytest.raises(ValueError):
        load_config(path)


def test_config_error_exits_2(tmp_path):
    path = tmp_path / "bad.toml"
    path.write_text("[loss]\nthreshold_db = 3.0\n")
    assert main(["synth", "--out", str(tmp_path), "--count", "0", "--config", str(path)]) == EXIT_VALIDATION


def test_make_item_alignment():
    item = make_item(0, MATCHED, dry_samples=4000)
    assert item.rir.samples[0] == 1.0
    assert item.wet.samples.size == 4000 + item.rir.samples.size - 1
    np.testing.assert_allclose(item.wet.samples[:10], item.dry.samples[:10], atol=0.2)


def test_excitations():
    for kind in ("white", "pink", "chirps"):
        x = excitation(kind, 8000, 1)
        assert np.max(np.abs(x.samples)) == pytest.approx(0.5)
        np.testing.assert_array_equal(x.samples, excitation(kind, 8000, 1).samples)
    with pytest.raises(ValueError):
        excitation("brown", 10, 0)


def test_wav_io(tmp_path):
    from scipy.io import wavfile

    x = Waveform(np.linspace(-0.5, 0.5, 100))
    write_wav(tmp_path / "f.wav", x)
    np.testing.assert_allclose(read_wav(tmp_path / "f.wav").samples, x.samples, atol=1e-7)
    wavfile.write(tmp_path / "i.wav", 16000, np.array([0, 16384, -32768], dtype=np.int16))
    np.testing.assert_array_equal(read_wav(tmp_path / "i.wav").samples, [0, 0.5, -1.0])
    with pytest.raises(ValueError):
        read_wav(tmp_path / "i.wav", expected_rate=8000)
    wavfile.write(tmp_path / "s.wav", 16000, np.zeros((10, 2), dtype=np.int16))
    with pytest.raises(ValueError):
        read_wav(tmp_path / "s.wav")
