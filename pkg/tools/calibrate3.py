"""KL warm-up experiment (not shipped)."""
import sys, time
import numpy as np, torch
from disentaug import *
from disentaug.train import TrainConfig, init_model, _dataset_tensors
from disentaug.model import ModelConfig, kl_decomposed, loss_cls, loss_recon, reparameterize
from disentaug.episodes import _posterior_arrays, sample_episode, fit_classifier, evaluate, ClassifierConfig

def train_warmup(dataset, model, cfg, warmup_epochs=15):
    x_all, y_all = _dataset_tensors(dataset)
    x_all = x_all.reshape(len(dataset), -1)
    n = len(dataset)
    opt = torch.optim.Adam(model.parameters(), lr=cfg.learning_rate)
    rng = np.random.default_rng([cfg.seed, 0xD5])
    gen = torch.Generator().manual_seed(cfg.seed)
    model.train()
    for epoch in range(cfg.epochs):
        lr = cfg.learning_rate * (cfg.decay_factor ** sum(1 for e in cfg.decay_epochs if epoch >= e))
        for g in opt.param_groups: g["lr"] = lr
        w = min(1.0, (epoch + 1) / warmup_epochs) if warmup_epochs else 1.0
        order = rng.permutation(n)
        for lo in range(0, n, cfg.batch_size):
            idx = order[lo:lo+cfg.batch_size]
            if len(idx) < 2: continue
            x, y = x_all[idx], y_all[idx]
            d = model.config.latent_dim
            e1 = torch.randn(len(idx), d, generator=gen); e2 = torch.randn(len(idx), d, generator=gen)
            xm = model.extract(x); z_i = model.pool(xm); st = model.encode(xm)
            z_v = reparameterize(st, e1); z = z_i + z_v
            xh = model.decode(z)
            lc = loss_cls(model.classify(z_i), y)
            rc = loss_recon(xm, xh)
            mi, tc, dim = kl_decomposed(st, z_v, n)
            la = loss_cls(model.classify(z_i + reparameterize(st, e2)), y)
            tot = lc + rc + w*(mi + cfg.alpha*tc + dim) + cfg.beta*la
            opt.zero_grad(); tot.backward(); opt.step()
    model.eval()
    return model

def bench(z_i, mu, sigma, novel, mode, n_aug, episodes=200, seed=21):
    accs = []
    d = z_i.shape[1]
    for i in range(episodes):
        rng = np.random.default_rng([seed, i])
        ep = sample_episode(novel, 5, 1, 16, rng)
        feats = [z_i[ep.support_indices]]; labels = [ep.support_y]
        if mode != "none":
            for k, g in enumerate(ep.support_indices):
                parts = mu[g] + sigma[g]*rng.normal(size=(n_aug, d)) if mode=="posterior" else rng.normal(size=(n_aug, d))
                feats.append(z_i[g] + parts); labels.append(np.full(n_aug, ep.support_y[k]))
        X = np.concatenate(feats); y = np.concatenate(labels)
        clf = fit_classifier(X, y, "linear", ClassifierConfig(seed=i), n_classes=5)
        accs.append(evaluate(clf, z_i[ep.query_indices], ep.query_y))
    a = np.array(accs); return a.mean(), 1.96*a.std(ddof=1)/np.sqrt(len(a))

def run(D=32, latent=6, warmup=15, epochs=60, n_base=100, proto=1.0, var=0.5, seed=7):
    t0=time.time()
    spec = make_task_spec(20, 10, latent, (D,1,1), proto, var, seed=seed)
    base = sample_dataset(spec, n_base, "base-train", seed=1)
    novel = sample_dataset(spec, 50, "novel", seed=2)
    mc = ModelConfig(n_base_classes=20, backbone="identity", feature_shape=(D,1,1))
    model = init_model(mc, 0)
    decay = tuple(e for e in (int(epochs*0.6), int(epochs*0.85)) if e < epochs)
    cfg = TrainConfig(epochs=epochs, decay_epochs=decay, seed=0)
    model = train_warmup(base, model, cfg, warmup_epochs=warmup)
    z_i, mu, sigma = _posterior_arrays(model, novel.features)
    print(f"D={D} L={latent} wu={warmup} |mu|={np.abs(mu).mean():.3f} sig_mean={sigma.mean():.3f} "
          f"sig_med={np.median(sigma):.3f} t={time.time()-t0:.0f}s")
    res={}
    for mode, n_aug in (("none",0),("posterior",5),("posterior",1),("prior",5)):
        res[(mode,n_aug)] = bench(z_i, mu, sigma, novel, mode, n_aug)
    print("   none %.2f+/-%.2f post5 %.2f post1 %.2f prior5 %.2f | gain %.2f p5-p1 %.2f p5-pr %.2f" % (
        res[("none",0)][0], res[("none",0)][1], res[("posterior",5)][0], res[("posterior",1)][0],
        res[("prior",5)][0],
        res[("posterior",5)][0]-res[("none",0)][0],
        res[("posterior",5)][0]-res[("posterior",1)][0],
        res[("posterior",5)][0]-res[("prior",5)][0]))
    sys.stdout.flush()

if __name__ == "__main__":
    run(warmup=15)
    run(warmup=30)
    run(warmup=0)
