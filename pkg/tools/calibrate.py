"""Calibration sweep for the end-to-end acceptance setup (not shipped)."""
import sys, time
import numpy as np
from disentaug import *
from disentaug.train import TrainConfig, init_model, train
from disentaug.model import ModelConfig

def run(proto, var, latent, epochs, n_base_per, seed=7, episodes=200, dim=32):
    t0 = time.time()
    spec = make_task_spec(n_base_classes=20, n_novel_classes=10, latent_dim=latent,
                          feature_shape=(dim,1,1), prototype_scale=proto,
                          shared_variation_scales=var, seed=seed)
    base = sample_dataset(spec, n_base_per, "base-train", seed=1)
    novel = sample_dataset(spec, 50, "novel", seed=2)
    mc = ModelConfig(n_base_classes=20, backbone="identity", feature_shape=(dim,1,1))
    model = init_model(mc, 0)
    decay = tuple(e for e in (int(epochs*0.5), int(epochs*0.8)) if e < epochs)
    tcfg = TrainConfig(epochs=epochs, decay_epochs=decay, seed=0)
    model, history, _ = train(base, model, tcfg)
    res = {}
    for kind, n_aug in (("none",0), ("posterior",5), ("posterior",1), ("prior",5)):
        scheme = prepare_scheme(kind, n_aug=n_aug)
        rep = run_benchmark(model, novel, scheme, "linear", n_episodes=episodes,
                            way=5, shot=1, master_seed=11)
        res[(kind,n_aug)] = (rep.mean_accuracy, rep.ci95)
    el = time.time()-t0
    print(f"proto={proto} var={var} latent={latent} ep={epochs} nb={n_base_per} "
          f"recon={history[-1]['recon']:.2f} t={el:.0f}s")
    for k, (m, c) in res.items():
        print(f"   {k}: {m:.2f} +/- {c:.2f}")
    gain5 = res[("posterior",5)][0] - res[("none",0)][0]
    gain1 = res[("posterior",5)][0] - res[("posterior",1)][0]
    pvp = res[("posterior",5)][0] - res[("prior",5)][0]
    print(f"   gain(post5-none)={gain5:.2f} (need>=2.0)  post5-post1={gain1:.2f} "
          f"post5-prior5={pvp:.2f} (need>=1 ci={res[('posterior',5)][1]:.2f})")
    sys.stdout.flush()
    return res

if __name__ == "__main__":
    run(1.0, 0.5, 6, 60, 100)
    run(2.0, 1.0, 6, 60, 100)
