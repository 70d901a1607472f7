import numpy as np
import pytest

from rollstream.data import (EngineConfig, SequenceStore, export_csv, gen_ar1_corpus,
                             gen_toy_corpus, load_config, load_sequence,
                             save_config, save_sequence)
from rollstream.errors import (BadMagicError, ConfigError, TruncatedFileError,
                               VersionError)


class TestToyCorpus:
    def test_deterministic_per_seed(self):
        a = gen_toy_corpus(2, L=300, seed=9)
        b = gen_toy_corpus(2, L=300, seed=9)
        for sa, sb in zip(a, b):
            np.testing.assert_array_equal(sa.frames, sb.frames)
            np.testing.assert_array_equal(sa.cond, sb.cond)
        c = gen_toy_corpus(2, L=300, seed=10)
        assert not np.array_equal(a[0].frames, c[0].frames)

    def test_pose_follows_conditioning(self):
        # correlation oracle: some (pose dim, cond channel, lag) pair must
        # correlate strongly, otherwise the signal is unlearnable
        store = gen_toy_corpus(1, L=2000, seed=3)[0]
        x = store.frames - store.frames.mean(axis=0)
        u = store.cond - store.cond.mean(axis=0)
        best = 0.0
        for lag in range(0, 12):
            xl = x[lag:] if lag else x
            ul = u[:len(u) - lag] if lag else u
            xs = xl / (xl.std(axis=0) + 1e-12)
            us = ul / (ul.std(axis=0) + 1e-12)
            corr = np.abs(xs.T @ us) / len(xs)
            best = max(best, corr.max())
        assert best > 0.5

    def test_style_offsets_recoverable(self):
        corpus = gen_toy_corpus(6, L=1500, dim=12, styles=3, seed=4)
        means = {}
        for store in corpus:
            means.setdefault(store.style, []).append(store.frames.mean(axis=0))
        centers = {s: np.mean(m, axis=0) for s, m in means.items()}
        from rollstream.data import OBS_NOISE_STD
        for a in centers:
            for b in centers:
                if a < b:
                    dist = np.linalg.norm(centers[a] - centers[b])
                    assert dist > 5 * OBS_NOISE_STD

    def test_rejects_more_styles_than_dims(self):
        with pytest.raises(ConfigError):
            gen_toy_corpus(1, L=100, dim=4, styles=5)


class TestAr1Corpus:
    def test_iid_when_phi_zero(self):
        store = gen_ar1_corpus(0.0, 1.0, L=100_000, seed=5)
        x = store.frames[:, 0].astype(float)
        r1 = np.corrcoef(x[:-1], x[1:])[0, 1]
        assert abs(r1) < 0.02

    def test_marginal_variance_closed_form(self):
        store = gen_ar1_corpus(0.9, 0.1, L=100_000, seed=6)
        x = store.frames[:, 0].astype(float)
        assert x.var() == pytest.approx(0.1 ** 2 / (1 - 0.9 ** 2), rel=0.05)

    def test_lag_one_autocorrelation(self):
        store = gen_ar1_corpus(0.9, 0.1, L=100_000, seed=7)
        x = store.frames[:, 0].astype(float)
        r1 = np.corrcoef(x[:-1], x[1:])[0, 1]
        assert r1 == pytest.approx(0.9, abs=0.02)

    def test_rejects_nonstationary(self):
        with pytest.raises(ConfigError):
            gen_ar1_corpus(1.05, 0.1, L=100)


class TestSequenceFile:
    def test_roundtrip_bit_exact(self, tmp_path):
        store = gen_toy_corpus(1, L=77, seed=8)[0]
        path = tmp_path / "seq.rseq"
        save_sequence(store, path)
        loaded = load_sequence(path)
        np.testing.assert_array_equal(loaded.frames, store.frames)
        np.testing.assert_array_equal(loaded.cond, store.cond)
        assert loaded.style == store.style
        assert loaded.fps == store.fps
        # saving the loaded store reproduces the same bytes
        path2 = tmp_path / "seq2.rseq"
        save_sequence(loaded, path2)
        assert path.read_bytes() == path2.read_bytes()

    def test_empty_sequence_legal(self, tmp_path):
        store = SequenceStore(frames=np.zeros((0, 3)), cond=np.zeros((0, 2)))
        path = tmp_path / "empty.rseq"
        save_sequence(store, path)
        loaded = load_sequence(path)
        assert loaded.L == 0
        assert loaded.dim == 3

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "bad.rseq"
        path.write_bytes(b"XXXX" + b"\x00" * 40)
        with pytest.raises(BadMagicError):
            load_sequence(path)

    def test_truncation_names_expected_bytes(self, tmp_path):
        store = gen_toy_corpus(1, L=50, seed=8)[0]
        path = tmp_path / "seq.rseq"
        save_sequence(store, path)
        full = path.read_bytes()
        path.write_bytes(full[:len(full) - 10])
        with pytest.raises(TruncatedFileError, match=str(len(full))):
            load_sequence(path)

    def test_version_mismatch_rejected(self, tmp_path):
        store = gen_toy_corpus(1, L=10, seed=8)[0]
        path = tmp_path / "seq.rseq"
        save_sequence(store, path)
        raw = bytearray(path.read_bytes())
        raw[4] = 99  # bump the little-endian version field
        path.write_bytes(bytes(raw))
        with pytest.raises(VersionError):
            load_sequence(path)

    def test_fuzz_loader_never_crashes(self, tmp_path):
        rng = np.random.default_rng(0)
        for i in range(50):
            blob = rng.integers(0, 256, size=int(rng.integers(0, 200)),
                                dtype=np.uint8).tobytes()
            if rng.random() < 0.5:
                blob = b"RSTM" + blob
            path = tmp_path / f"fuzz{i}.rseq"
            path.write_bytes(blob)
            try:
                load_sequence(path)
            except (BadMagicError, TruncatedFileError, VersionError, ConfigError):
                pass

    def test_csv_export(self, tmp_path):
        store = gen_toy_corpus(1, L=5, dim=2, c=2, styles=1, seed=8)[0]
        path = tmp_path / "seq.csv"
        export_csv(store, path)
        lines = path.read_text().splitlines()
        assert lines[0] == "x0,x1,u0,u1"
        assert len(lines) == 6


class TestEngineConfig:
    def test_default_file_ships_and_loads(self):
        from pathlib import Path
        cfg = load_config(Path(__file__).resolve().parent.parent / "configs" / "default.cfg")
        assert cfg.T == 1000
        assert cfg.N == 100
        assert cfg.beta1 == pytest.approx(4e-5)

    def test_divisibility_accepted_and_rejected(self, tmp_path):
        good = tmp_path / "good.cfg"
        good.write_text("T = 1000\nN = 100\n")
        assert load_config(good).N == 100
        bad = tmp_path / "bad.cfg"
        bad.write_text("T = 1000\nN = 64\n")
        with pytest.raises(ConfigError, match="T mod N"):
            load_config(bad)

    def test_unknown_key_rejected_with_line(self, tmp_path):
        path = tmp_path / "bad.cfg"
        path.write_text("T = 1000\nwat = 7\n")
        with pytest.raises(ConfigError, match=r":2"):
            load_config(path)

    def test_parse_error_names_line(self, tmp_path):
        path = tmp_path / "bad.cfg"
        path.write_text("T = not_a_number\n")
        with pytest.raises(ConfigError, match=r":1"):
            load_config(path)

    def test_ladder_requires_single_step_regime(self):
        with pytest.raises(ConfigError, match="T_r == N"):
            EngineConfig(ladder_l=2, T_r=1000, N=100)
        EngineConfig(ladder_l=2, T_r=100, N=100)  # accepted

    def test_cross_field_messages_name_both(self):
        with pytest.raises(ConfigError, match="T_r.*N|N.*T_r"):
            EngineConfig(T_r=150, N=100)

    def test_roundtrip_through_save(self, tmp_path):
        cfg = EngineConfig(T=500, N=50, T_r=100, epochs=3)
        path = tmp_path / "cfg.cfg"
        save_config(cfg, path)
        assert load_config(path) == cfg
