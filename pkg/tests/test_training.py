import numpy as np
import pytest

from vem import curation as cu
from vem import training as tr
from vem.audiofeat import SAMPLE_RATE, Waveform, logmel
from vem.errors import DataError, StageOrderError
from vem.rng import Rng
from vem.timeline import DEFAULT_FPS


def tiny_cfg(**kw):
    base = dict(seed=0, feature_dim=64, time_hidden=8, aligner_hidden=6,
                aligner_steps=60, widths=(8,), temb_dim=16, T=50,
                diffusion_steps=12, diffusion_lr=1e-3, adapter_steps=8,
                adapter_lr=5e-4)
    base.update(kw)
    return tr.TrainConfig(**base)


@pytest.fixture(scope="module")
def corpus():
    return cu.synth_corpus(2, seed=21)


@pytest.fixture(scope="module")
def stage_b(corpus):
    return tr.train_stage_diffusion(corpus, tiny_cfg())


# -- labels ----------------------------------------------------------------


def test_intersection_labels_structure(corpus):
    ann, wav = corpus[0]
    labels = tr.intersection_labels(ann, wav)
    assert set(np.unique(labels)).issubset({0, 1})
    assert len(labels) == int(np.ceil(ann.duration_s * DEFAULT_FPS))
    # every active frame contains an annotated transition
    tr_frames = {int(t * DEFAULT_FPS) for t in ann.transitions.times_s}
    active = set(np.nonzero(labels)[0].tolist())
    assert active <= tr_frames
    # transitions sit on real beats here, so a decent share intersects
    assert len(active) >= len(tr_frames) // 2


# -- stage A ---------------------------------------------------------------


def test_stage_aligner_learns(corpus):
    net, losses = tr.train_stage_aligner(corpus, tiny_cfg())
    assert len(losses) == 60
    assert losses[-1] < losses[0]
    assert net.feat_dim == corpus[0][0].frame_features.shape[0]


def test_stage_aligner_empty_corpus():
    with pytest.raises(DataError):
        tr.train_stage_aligner([], tiny_cfg())


# -- stage B ---------------------------------------------------------------


def test_stage_diffusion_outputs(stage_b):
    unet, temb, meta, losses = stage_b
    assert len(losses) == 12 and all(np.isfinite(losses))
    assert meta["stage"] == "diffusion"
    assert meta["in_channels"] == 240
    assert meta["latent_std"] > 0
    assert unet.adapters is None


def test_stage_diffusion_deterministic(corpus):
    a = tr.train_stage_diffusion(corpus, tiny_cfg(diffusion_steps=6))
    b = tr.train_stage_diffusion(corpus, tiny_cfg(diffusion_steps=6))
    assert a[3] == b[3]
    for (na, pa), (nb, pb) in zip(a[0].named_params(), b[0].named_params()):
        assert na == nb
        np.testing.assert_array_equal(pa.data, pb.data)


def test_diffusion_loop_rejects_unknown_decay(corpus):
    with pytest.raises(ValueError):
        tr.train_stage_diffusion(corpus, tiny_cfg(diffusion_steps=2, lr_decay="bogus"))


# -- stage C ---------------------------------------------------------------


def test_stage_adapter_requires_diffusion_checkpoint(corpus):
    net, _ = tr.train_stage_aligner(corpus, tiny_cfg(aligner_steps=5))
    unet, temb, meta, _ = tr.train_stage_diffusion(corpus, tiny_cfg(diffusion_steps=2))
    with pytest.raises(StageOrderError):
        tr.train_stage_adapter(corpus, tiny_cfg(), net, unet, temb, {"stage": "aligner"})


def test_stage_adapter_attaches_and_trains(corpus):
    cfg = tiny_cfg(diffusion_steps=4, adapter_steps=6, aligner_steps=10)
    aligner, _ = tr.train_stage_aligner(corpus, cfg)
    unet, temb, meta, _ = tr.train_stage_diffusion(corpus, cfg)
    unet, temb, meta, losses = tr.train_stage_adapter(corpus, cfg, aligner, unet, temb, meta)
    assert meta["stage"] == "adapter"
    assert meta["aligner_hidden"] == 6
    assert unet.adapters is not None
    assert len(losses) == 6 and all(np.isfinite(losses))


def test_three_stage_train_bundle(corpus):
    cfg = tiny_cfg(aligner_steps=10, diffusion_steps=4, adapter_steps=4)
    out = tr.three_stage_train(corpus, cfg)
    assert set(out) == {"aligner", "unet", "time_embedder", "meta", "losses"}
    assert out["meta"]["stage"] == "adapter"
    assert set(out["losses"]) == {"aligner", "diffusion", "adapter"}


# -- checkpoints -----------------------------------------------------------


def test_aligner_checkpoint_round_trip(tmp_path, corpus):
    cfg = tiny_cfg(aligner_steps=10)
    net, _ = tr.train_stage_aligner(corpus, cfg)
    path = tmp_path / "aligner.vemt"
    tr.save_aligner(path, net, cfg)
    loaded, meta = tr.load_aligner(path)
    assert meta["stage"] == "aligner"
    for (na, pa), (nb, pb) in zip(net.named_params(), loaded.named_params()):
        assert na == nb
        np.testing.assert_array_equal(pa.data, pb.data)


def test_diffusion_checkpoint_round_trip(tmp_path, stage_b):
    unet, temb, meta, _ = stage_b
    path = tmp_path / "diff.vemt"
    tr.save_diffusion(path, unet, temb, meta)
    u2, t2, m2 = tr.load_diffusion(path)
    assert m2["stage"] == "diffusion"
    assert m2["widths"] == list(unet.widths)
    for (na, pa), (nb, pb) in zip(unet.named_params(), u2.named_params()):
        assert na == nb
        np.testing.assert_array_equal(pa.data, pb.data)
    for (na, pa), (nb, pb) in zip(temb.named_params(), t2.named_params()):
        np.testing.assert_array_equal(pa.data, pb.data)


def test_adapter_checkpoint_restores_adapters(tmp_path, corpus):
    cfg = tiny_cfg(aligner_steps=10, diffusion_steps=4, adapter_steps=4)
    out = tr.three_stage_train(corpus, cfg)
    path = tmp_path / "adapter.vemt"
    tr.save_diffusion(path, out["unet"], out["time_embedder"], out["meta"])
    u2, _, m2 = tr.load_diffusion(path)
    assert m2["stage"] == "adapter"
    assert u2.adapters is not None
    np.testing.assert_array_equal(u2.adapters[0].gamma_w.data,
                                  out["unet"].adapters[0].gamma_w.data)


def test_checkpoint_kind_guards(tmp_path, corpus, stage_b):
    cfg = tiny_cfg(aligner_steps=5)
    net, _ = tr.train_stage_aligner(corpus, cfg)
    apath = tmp_path / "a.vemt"
    tr.save_aligner(apath, net, cfg)
    with pytest.raises(StageOrderError):
        tr.load_diffusion(apath)
    unet, temb, meta, _ = stage_b
    dpath = tmp_path / "d.vemt"
    tr.save_diffusion(dpath, unet, temb, meta)
    with pytest.raises(StageOrderError):
        tr.load_aligner(dpath)


# -- sampling --------------------------------------------------------------


def test_sample_mel_shapes_and_determinism(stage_b, corpus):
    unet, temb, meta, _ = stage_b
    ann = corpus[0][0]
    mel_a = tr.sample_mel(unet, temb, meta, ann, steps=4, seed=9)
    mel_b = tr.sample_mel(unet, temb, meta, ann, steps=4, seed=9)
    np.testing.assert_array_equal(mel_a.values, mel_b.values)
    want_frames = int(np.ceil(ann.duration_s * 15.625)) * 4
    assert mel_a.values.shape == (want_frames, 60)
    mel_c = tr.sample_mel(unet, temb, meta, ann, steps=4, seed=10)
    assert np.abs(mel_a.values - mel_c.values).max() > 0


def test_sample_mel_unconditional_path(stage_b, corpus):
    unet, temb, meta, _ = stage_b
    ann = corpus[0][0]
    mel = tr.sample_mel(unet, temb, meta, ann, steps=3, seed=2, conditioned=False)
    assert np.isfinite(mel.values).all()


def test_generation_tb_iou_bounds(stage_b, corpus):
    unet, temb, meta, _ = stage_b
    ann = corpus[0][0]
    mel = tr.sample_mel(unet, temb, meta, ann, steps=3, seed=4)
    v = tr.generation_tb_iou(mel, ann)
    assert 0.0 <= v <= 1.0


def test_generation_tb_iou_detector_failure_scores_zero(corpus):
    silent = logmel(Waveform(np.zeros(5 * SAMPLE_RATE, dtype=np.float32), SAMPLE_RATE))
    assert tr.generation_tb_iou(silent, corpus[0][0]) == 0.0
