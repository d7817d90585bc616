"""Calibration with originals = z_I protocol (not shipped)."""
import sys, time
import numpy as np
from disentaug import *
from disentaug.train import TrainConfig, init_model, train
from disentaug.model import ModelConfig
from disentaug.episodes import _posterior_arrays, sample_episode, fit_classifier, evaluate, ClassifierConfig

def bench(z_i, mu, sigma, novel, mode, n_aug, episodes=200, seed=21):
    accs = []
    d = z_i.shape[1]
    for i in range(episodes):
        rng = np.random.default_rng([seed, i])
        ep = sample_episode(novel, 5, 1, 16, rng)
        feats = [z_i[ep.support_indices]]; labels = [ep.support_y]
        if mode != "none":
            for k, g in enumerate(ep.support_indices):
                if mode == "posterior":
                    parts = mu[g] + sigma[g]*rng.normal(size=(n_aug, d))
                elif mode == "prior":
                    parts = rng.normal(size=(n_aug, d))
                feats.append(z_i[g] + parts); labels.append(np.full(n_aug, ep.support_y[k]))
        X = np.concatenate(feats); y = np.concatenate(labels)
        clf = fit_classifier(X, y, "linear", ClassifierConfig(seed=i), n_classes=5)
        accs.append(evaluate(clf, z_i[ep.query_indices], ep.query_y))
    a = np.array(accs); return a.mean(), 1.96*a.std(ddof=1)/np.sqrt(len(a))

def run(D=32, latent=6, proto=1.0, var=0.5, epochs=60, n_base=100, seed=7, alpha=4.0, beta=1.0):
    t0=time.time()
    spec = make_task_spec(20, 10, latent, (D,1,1), proto, var, seed=seed)
    base = sample_dataset(spec, n_base, "base-train", seed=1)
    novel = sample_dataset(spec, 50, "novel", seed=2)
    mc = ModelConfig(n_base_classes=20, backbone="identity", feature_shape=(D,1,1))
    model = init_model(mc, 0)
    decay = tuple(e for e in (int(epochs*0.5), int(epochs*0.8)) if e < epochs)
    tcfg = TrainConfig(epochs=epochs, decay_epochs=decay, seed=0, alpha=alpha, beta=beta)
    model, hist, _ = train(base, model, tcfg)
    z_i, mu, sigma = _posterior_arrays(model, novel.features)
    print(f"D={D} L={latent} ep={epochs} a={alpha} b={beta} recon={hist[-1]['recon']:.2f} "
          f"kl_mi={hist[-1]['kl_mi']:.2f} l_cls={hist[-1]['l_cls']:.2f} "
          f"|mu|={np.abs(mu).mean():.3f} sig={sigma.mean():.3f} t={time.time()-t0:.0f}s")
    res={}
    for mode, n_aug in (("none",0),("posterior",5),("posterior",1),("prior",5)):
        m,c = bench(z_i, mu, sigma, novel, mode, n_aug)
        res[(mode,n_aug)]=(m,c)
    print("   none %.2f+/-%.2f post5 %.2f post1 %.2f prior5 %.2f | gain %.2f p5-p1 %.2f p5-pr %.2f" % (
        res[("none",0)][0], res[("none",0)][1], res[("posterior",5)][0], res[("posterior",1)][0],
        res[("prior",5)][0],
        res[("posterior",5)][0]-res[("none",0)][0],
        res[("posterior",5)][0]-res[("posterior",1)][0],
        res[("posterior",5)][0]-res[("prior",5)][0]))
    sys.stdout.flush()

if __name__ == "__main__":
    run(D=32, latent=6)
    run(D=32, latent=16)
    run(D=64, latent=16)
