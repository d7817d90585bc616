"""Conv4-on-images calibration (not shipped)."""
import sys, time
import numpy as np, torch
from disentaug import *
from disentaug.train import TrainConfig, init_model, train
from disentaug.model import ModelConfig
from disentaug.episodes import sample_episode, fit_classifier, evaluate, ClassifierConfig

def bench_cached(z_i, mu, sigma, novel, mode, n_aug, episodes=200, seed=21):
    accs = []
    emb = z_i + mu
    d = z_i.shape[1]
    for i in range(episodes):
        rng = np.random.default_rng([seed, i])
        ep = sample_episode(novel, 5, 1, 16, rng)
        feats = [emb[ep.support_indices]]; labels = [ep.support_y]
        for k, gidx in enumerate(ep.support_indices):
            if mode == "none": break
            if mode == "posterior":
                parts = mu[gidx] + sigma[gidx]*rng.normal(size=(n_aug, d))
            elif mode == "prior":
                parts = rng.normal(size=(n_aug, d))
            feats.append(z_i[gidx] + parts); labels.append(np.full(n_aug, ep.support_y[k]))
        X = np.concatenate(feats); y = np.concatenate(labels)
        clf = fit_classifier(X, y, "linear", ClassifierConfig(seed=i), n_classes=5)
        accs.append(evaluate(clf, emb[ep.query_indices], ep.query_y))
    a = np.array(accs); return a.mean(), 1.96*a.std(ddof=1)/np.sqrt(len(a))

def run(img=16, latent=12, proto=1.0, var=0.5, epochs=40, n_base_per=100, seed=7):
    t0 = time.time()
    spec = make_task_spec(20, 10, latent, (3,img,img), proto, var, seed=seed)
    base = sample_dataset(spec, n_base_per, "base-train", seed=1)
    novel = sample_dataset(spec, 50, "novel", seed=2)
    out = (32, img//16, img//16)
    mc = ModelConfig(n_base_classes=20, backbone="conv4", feature_shape=out, in_channels=3)
    model = init_model(mc, 0)
    decay = tuple(e for e in (int(epochs*0.5), int(epochs*0.8)) if e < epochs)
    tcfg = TrainConfig(epochs=epochs, decay_epochs=decay, seed=0)
    model, history, _ = train(base, model, tcfg)
    ttrain = time.time()-t0
    from disentaug.episodes import _posterior_arrays
    t1 = time.time()
    z_i, mu, sigma = _posterior_arrays(model, novel.features)
    print(f"img={img} latent={latent} ep={epochs} recon={history[-1]['recon']:.2f} "
          f"kl_mi={history[-1]['kl_mi']:.2f} l_cls={history[-1]['l_cls']:.3f} train={ttrain:.0f}s")
    print(f"   sigma mean {sigma.mean():.3f}  |mu| mean {np.abs(mu).mean():.3f}  |z_i| {np.abs(z_i).mean():.3f}")
    res = {}
    for mode, n_aug in (("none",0),("posterior",5),("posterior",1),("prior",5)):
        m, c = bench_cached(z_i, mu, sigma, novel, mode, n_aug)
        res[(mode,n_aug)] = (m,c)
        print(f"   {mode}/{n_aug}: {m:.2f} +/- {c:.2f}")
    print(f"   gain={res[('posterior',5)][0]-res[('none',0)][0]:.2f} "
          f"p5-p1={res[('posterior',5)][0]-res[('posterior',1)][0]:.2f} "
          f"p5-prior={res[('posterior',5)][0]-res[('prior',5)][0]:.2f} "
          f"evaltime={time.time()-t1:.0f}s")
    sys.stdout.flush()

if __name__ == "__main__":
    run(img=16, latent=12, epochs=40)
