"""HTTP service over a trained checkpoint.

Endpoints: ``GET /health``, ``GET /config``, ``POST /predict``, ``POST /graph``.
Instances are posted as JSON with the same fields as the corpus format.
"""

from __future__ import annotations

from pathlib import Path
from typing import Optional

from fastapi import FastAPI, HTTPException
from pydantic import BaseModel, Field, model_validator

from .checkpoint import Checkpoint
from .data import Instance
from .errors import DataError, EscGcnError
from .graph import DepTree, adjacency, prune


class InstanceIn(BaseModel):
    id: str = ""
    tokens: list[str]
    pos: list[str]
    ner: list[str]
    head: list[int]
    deprel: list[str]
    subj_span: tuple[int, int]
    obj_span: tuple[int, int]
    relation: Optional[str] = None

    @model_validator(mode="after")
    def _lengths(self):
        n = len(self.tokens)
        for name in ("pos", "ner", "head", "deprel"):
            if len(getattr(self, name)) != n:
                raise ValueError(f"{name} has {len(getattr(self, name))} entries, tokens has {n}")
        return self

    def to_instance(self, negative_label: str) -> Instance:
        inst = Instance(
            tokens=list(self.tokens), pos=list(self.pos), ner=list(self.ner), head=list(self.head),
            deprel=list(self.deprel), subj_span=tuple(self.subj_span), obj_span=tuple(self.obj_span),
            relation=self.relation or negative_label, id=self.id,
        )
        inst.validate()
        return inst


class PredictRequest(BaseModel):
    instances: list[InstanceIn] = Field(min_length=1)
    attention: bool = False


class Prediction(BaseModel):
    id: str
    label: str
    probability: float
    probabilities: dict[str, float]
    alpha: Optional[list[float]] = None
    attention: Optional[list[list[list[float]]]] = None


class PredictResponse(BaseModel):
    predictions: list[Prediction]


class GraphRequest(BaseModel):
    instance: InstanceIn
    k: Optional[int] = Field(default=1, ge=0, description="null keeps the full tree")


class GraphResponse(BaseModel):
    kept_nodes: list[int]
    kept_edges: list[tuple[int, int]]
    a_tilde: list[list[int]]
    degree: list[int]


def create_app(checkpoint: str | Path | Checkpoint) -> FastAPI:
    ckpt = checkpoint if isinstance(checkpoint, Checkpoint) else Checkpoint.load(checkpoint)
    app = FastAPI(title="escgcn", version="0.1.0")

    @app.get("/health")
    def health():
        return {"status": "ok", "epoch": ckpt.epoch, "labels": ckpt.vocabs.relations}

    @app.get("/config")
    def config():
        return ckpt.config.to_dict()

    @app.post("/predict", response_model=PredictResponse)
    def predict(req: PredictRequest):
        from .model import collate, encode_instance, forward

        try:
            insts = [i.to_instance(ckpt.vocabs.negative_label) for i in req.instances]
        except (DataError, ValueError) as exc:
            raise HTTPException(status_code=422, detail=str(exc)) from exc
        cfg, vocabs = ckpt.config, ckpt.vocabs
        try:
            batch = collate([encode_instance(i, vocabs, cfg) for i in insts], cfg.position_clip)
            out = forward(ckpt.params, batch, cfg, training=False)
        except EscGcnError as exc:
            raise HTTPException(status_code=422, detail=str(exc)) from exc
        preds = []
        for b, inst in enumerate(insts):
            p = out.probs.data[b]
            k = int(p.argmax())
            n = inst.n
            preds.append(Prediction(
                id=inst.id,
                label=vocabs.relations[k],
                probability=float(p[k]),
                probabilities={lab: float(v) for lab, v in zip(vocabs.relations, p)},
                alpha=None if out.alpha is None else out.alpha.data[b, :n].tolist(),
                attention=[a.data[b, :n, :n].tolist() for a in out.attentions] if req.attention else None,
            ))
        return PredictResponse(predictions=preds)

    @app.post("/graph", response_model=GraphResponse)
    def graph(req: GraphRequest):
        try:
            inst = req.instance.to_instance(ckpt.vocabs.negative_label)
        except (DataError, ValueError) as exc:
            raise HTTPException(status_code=422, detail=str(exc)) from exc
        pg = prune(DepTree(inst.head), inst.spans(), req.k)
        adj = adjacency(pg, inst.n)
        return GraphResponse(
            kept_nodes=sorted(pg.kept_nodes),
            kept_edges=sorted(pg.kept_edges),
            a_tilde=adj.A_tilde.astype(int).tolist(),
            degree=adj.degree.astype(int).tolist(),
        )

    return app
