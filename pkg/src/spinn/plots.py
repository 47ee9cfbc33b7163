"""Static figures for the CLI's --plot flag.  Each writes PNGs next to the records."""

from __future__ import annotations

from pathlib import Path

import matplotlib.pyplot as plt
import numpy as np


def _save(fig, path: Path) -> str:
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return str(path)


def _trajectory(records, title: str, path: Path) -> str:
    t = [r.t for r in records]
    fig, ax = plt.subplots(2, 2, figsize=(8, 6))
    err = [r.l2_error if r.l2_error is not None else np.nan for r in records]
    ax[0, 0].semilogy(t, err, "k.-")
    ax[0, 0].set_ylabel("L2 error")
    dims = len(records[0].F)
    for k in range(dims):
        lab = "xyz"[k] if dims > 1 else None
        ax[0, 1].semilogy(t, [max(r.F[k], 1e-300) for r in records], ".-", label=lab)
        ax[1, 0].plot(t, [r.beta[k] for r in records], ".-", label=lab)
    ax[0, 1].set_ylabel("frequency indicator")
    ax[1, 0].set_ylabel("beta")
    ax[1, 1].step(t, [r.N for r in records], where="post", color="k")
    ax[1, 1].set_ylabel("N")
    if dims > 1:
        ax[0, 1].legend()
    for a in ax.flat:
        a.set_xlabel("t")
    fig.suptitle(title)
    return _save(fig, path)


def render(command: str, rc, files, payload) -> list[str]:
    out = rc.out_dir
    made = []
    if command in ("solve", "cn"):
        for point, last in payload:
            # re-read the record file of each sweep point
            from .cli import _tag, parse_records

            f = out / f"{command}{_tag(point)}.{rc.fmt}"
            if rc.fmt != "csv":
                continue
            made.append(_trajectory(parse_records(f), f"{rc.problem.id} {command}", f.with_suffix(".png")))
    elif command == "fit":
        fig, ax = plt.subplots(1, 2, figsize=(9, 3.5))
        for mode, r in payload.items():
            ax[0].semilogy(r.train_mse, label=mode)
            ax[1].semilogy(r.test_mse, label=mode)
        ax[0].set_title("train MSE")
        ax[1].set_title("test MSE")
        for a in ax:
            a.set_xlabel("epoch")
            a.legend()
        made.append(_save(fig, out / "fit.png"))
    elif command == "infer":
        res = payload
        t = [r.t for r in res.records]
        kappa = rc.problem.params.get("kappa", np.nan)
        fig, ax = plt.subplots(1, 3, figsize=(11, 3.3))
        ax[0].semilogy(t, np.abs(np.array(res.theta) - kappa), "k.-")
        ax[0].set_ylabel("|theta - kappa|")
        ax[1].semilogy(t, res.sse, "k.-")
        ax[1].set_ylabel("SSE")
        ax[2].plot(t, [r.beta[0] for r in res.records], "k.-")
        ax[2].set_ylabel("beta")
        for a in ax:
            a.set_xlabel("t")
        made.append(_save(fig, out / "infer.png"))
    elif command == "recover":
        rows = payload
        fig, ax = plt.subplots(figsize=(5, 4))
        for s in sorted({r["sigma"] for r in rows}):
            sel = sorted((r for r in rows if r["sigma"] == s), key=lambda r: r["lambda"])
            ax.loglog([r["sse0"] for r in sel], [r["h_norm"] for r in sel], "o-", label=f"sigma={s:g}")
        ax.set_xlabel("SSE0")
        ax.set_ylabel("|h|_2")
        ax.legend()
        made.append(_save(fig, out / "recover_lcurve.png"))
    elif command == "table2":
        rows = payload
        fig, ax = plt.subplots(figsize=(5, 3.5))
        labels = [str(r["gamma"]) for r in rows]
        ax.bar(labels, [r["count"] for r in rows], color="0.4")
        ax.set_xlabel("hyperbolicity")
        ax.set_ylabel("index count")
        made.append(_save(fig, out / "table2.png"))
    return made
