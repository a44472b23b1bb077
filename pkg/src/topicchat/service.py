"""Operational shell: model bundle persistence, chat sessions, and the
HTTP API consumed by the web chat client."""

import hashlib
import json
import os
import threading
import time
import uuid
from dataclasses import dataclass, field

from . import persist
from .corpus import Vocabulary
from .generation import ProposalTable, generate_greedy, generate_mh
from .nmf import TopicModel, top_words
from .numkernel import ParamStore
from .seq2seq import ModelConfig

BUNDLE_VERSION = 1


@dataclass
class ModelBundle:
    """Self-contained trained artifact: everything generation needs."""

    config: ModelConfig
    params: ParamStore
    vocab: Vocabulary
    topic_model: TopicModel | None
    proposal: ProposalTable
    manifest: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.topic_model is not None:
            if self.topic_model.vocab_size != len(self.vocab):
                raise ValueError(
                    "topic model is not aligned to the bundle vocabulary"
                )
            if self.topic_model.tokens != self.vocab.tokens:
                raise ValueError("topic model tokens differ from the vocabulary")


def _now():
    # SOURCE_DATE_EPOCH makes bundle files byte-reproducible
    env = os.environ.get("SOURCE_DATE_EPOCH")
    return int(env) if env else int(time.time())


def make_manifest(seed, corpus_hashes, vocab, topic_model):
    return {
        "version": BUNDLE_VERSION,
        "seed": seed,
        "corpus_hashes": corpus_hashes,
        "vocab_hash": vocab.content_hash(),
        "topic_model_hash": topic_model.content_hash() if topic_model else None,
        "created": _now(),
    }


def save_bundle(bundle, path):
    payload = {
        "version": BUNDLE_VERSION,
        "manifest": bundle.manifest,
        "config": bundle.config.to_dict(),
        "vocab": bundle.vocab.tokens,
        "proposal": persist.array_to_blob(bundle.proposal.rows),
        "params": {
            name: persist.array_to_blob(arr)
            for name, arr in bundle.params.values.items()
        },
        "topic_model": None,
    }
    if bundle.topic_model is not None:
        tm = bundle.topic_model
        payload["topic_model"] = {
            "W": persist.array_to_blob(tm.W),
            "membership_k": tm.membership_k,
            "source": tm.source,
            "topic_word_sets": [sorted(int(i) for i in s) for s in tm.topic_word_sets],
        }
    persist.dump_json_file(payload, path)


def load_bundle(path):
    payload = persist.load_json_file(path)
    if payload.get("version") != BUNDLE_VERSION:
        raise ValueError(
            f"{path}: bundle version {payload.get('version')!r} is not "
            f"supported (expected {BUNDLE_VERSION})"
        )
    vocab = Vocabulary(payload["vocab"])
    manifest = payload["manifest"]
    if manifest.get("vocab_hash") != vocab.content_hash():
        raise ValueError(
            f"{path}: vocabulary hash mismatch; the bundle is corrupt or "
            "was assembled from mismatched pieces"
        )
    config = ModelConfig.from_dict(payload["config"])
    params = ParamStore(seed=manifest.get("seed", 0))
    for name, blob in payload["params"].items():
        params.add(name, persist.array_from_blob(blob))
    topic_model = None
    if payload["topic_model"] is not None:
        tm = payload["topic_model"]
        topic_model = TopicModel(
            W=persist.array_from_blob(tm["W"]),
            tokens=list(vocab.tokens),
            membership_k=tm["membership_k"],
            source=tm.get("source", ""),
            topic_word_sets=[set(ids) for ids in tm["topic_word_sets"]],
        )
        if manifest.get("topic_model_hash") != topic_model.content_hash():
            raise ValueError(f"{path}: topic model hash mismatch")
    proposal = ProposalTable(rows=persist.array_from_blob(payload["proposal"]))
    return ModelBundle(config=config, params=params, vocab=vocab,
                       topic_model=topic_model, proposal=proposal,
                       manifest=manifest)


@dataclass
class ChatSession:
    session_id: str
    created: float
    transcript: list = field(default_factory=list)
    base_seed: int = 0
    lock: threading.Lock = field(default_factory=threading.Lock)

    def next_seed(self):
        return self.base_seed + len(self.transcript)


class ChatService:
    """Owns the loaded bundles and the in-memory session table."""

    def __init__(self, bundles, default=None):
        if not bundles:
            raise ValueError("at least one bundle is required")
        self.bundles = dict(bundles)
        self.default = default or next(iter(self.bundles))
        self.sessions = {}
        self._sessions_lock = threading.Lock()

    def bundle_names(self):
        return list(self.bundles.keys())

    def get_bundle(self, name):
        key = name or self.default
        if key not in self.bundles:
            raise KeyError(key)
        return key, self.bundles[key]

    def get_session(self, session_id):
        with self._sessions_lock:
            if session_id and session_id in self.sessions:
                return self.sessions[session_id]
            new_id = session_id or uuid.uuid4().hex
            base = int.from_bytes(
                hashlib.sha256(new_id.encode()).digest()[:4], "big"
            )
            session = ChatSession(session_id=new_id, created=time.time(),
                                  base_seed=base)
            self.sessions[new_id] = session
            return session

    def chat(self, message, session_id=None, bundle=None, mode="greedy",
             seed=None, mh_steps=50):
        name, b = self.get_bundle(bundle)
        session = self.get_session(session_id)
        with session.lock:
            if mode == "mh":
                use_seed = seed if seed is not None else session.next_seed()
                result = generate_mh(message, b, steps=mh_steps, seed=use_seed)
            else:
                result = generate_greedy(message, b)
            session.transcript.append((message, result))
        code = result.code.tolist() if result.code is not None else []
        return {
            "session_id": session.session_id,
            "bundle": name,
            "reply": result.text,
            "topic_code": code,
            "topic_words_used": result.topic_words_used(b.vocab),
            "attention": {
                "message": result.message_attention,
                "topic": result.topic_attention,
            },
        }

    def topics(self, bundle=None):
        _, b = self.get_bundle(bundle)
        if b.topic_model is None:
            return {"r": 0, "topics": []}
        return {
            "r": b.topic_model.r,
            "topics": [
                {"id": j, "top_words": top_words(b.topic_model, j, 10)}
                for j in range(b.topic_model.r)
            ],
        }


def create_app(service):
    """FastAPI application over a ChatService."""
    from fastapi import FastAPI, Request
    from fastapi.exceptions import RequestValidationError
    from fastapi.responses import JSONResponse
    from pydantic import BaseModel

    class ChatRequest(BaseModel):
        session_id: str | None = None
        bundle: str | None = None
        message: str
        mode: str = "greedy"
        seed: int | None = None

    app = FastAPI(title="topicchat")
    app.state.service = service

    @app.exception_handler(RequestValidationError)
    async def on_bad_request(request: Request, exc):
        return JSONResponse(status_code=400, content={"error": str(exc)})

    @app.post("/api/chat")
    def chat(req: ChatRequest):
        if req.mode not in ("greedy", "mh"):
            return JSONResponse(
                status_code=400,
                content={"error": f"unknown mode {req.mode!r}"},
            )
        try:
            return service.chat(
                req.message, session_id=req.session_id, bundle=req.bundle,
                mode=req.mode, seed=req.seed,
            )
        except KeyError as exc:
            return JSONResponse(
                status_code=404, content={"error": f"unknown bundle {exc}"}
            )

    @app.get("/api/topics")
    def topics(bundle: str | None = None):
        try:
            return service.topics(bundle)
        except KeyError as exc:
            return JSONResponse(
                status_code=404, content={"error": f"unknown bundle {exc}"}
            )

    @app.get("/api/bundles")
    def bundles():
        return service.bundle_names()

    return app


def serve(bundle_paths, host="127.0.0.1", port=8000):
    """Load bundles and block serving the chat API.

    `bundle_paths` maps bundle names to file paths.
    """
    import uvicorn

    bundles = {name: load_bundle(path) for name, path in bundle_paths.items()}
    app = create_app(ChatService(bundles))
    uvicorn.run(app, host=host, port=port, log_level="info")
