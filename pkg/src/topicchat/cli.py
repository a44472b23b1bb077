"""Command-line entry points: topics-build, train, eval, chat, serve."""

import argparse
import hashlib
import sys
from pathlib import Path

from . import corpus, nmf, service, training
from .generation import build_proposal_table, generate_greedy, generate_mh
from .seq2seq import ModelConfig, save_checkpoint


def _file_hash(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _load_stop_words(path):
    if not path:
        return ()
    return tuple(
        w for w in Path(path).read_text(encoding="utf-8").split() if w
    )


def cmd_topics_build(args):
    texts, doc_ids = corpus.load_topic_documents(args.corpus)
    if not texts:
        print(f"error: topic corpus {args.corpus} is empty", file=sys.stderr)
        return 1
    docs = [corpus.tokenize(t) for t in texts]
    vocab = corpus.build_vocabulary(docs, cap=args.vocab_cap)
    stop = _load_stop_words(args.stop_words)
    dtm = corpus.build_doc_term_matrix(docs, vocab, doc_ids, stop_words=stop)
    weighted = corpus.tfidf_transform(dtm)
    model = nmf.build_topic_model(
        weighted, vocab, r=args.topics, membership_k=args.membership_k,
        seed=args.seed, max_iters=args.max_iters,
        source=Path(args.corpus).name,
    )
    nmf.save_topic_model(model, args.out)
    for j in range(model.r):
        words = nmf.top_words(model, j, 10)
        print(f"topic {j}: {' '.join(words)}")
    print(f"wrote topic model with r={model.r} to {args.out}")
    return 0


def _build_dataset(qa_path, vocab_cap, q_len, a_len):
    token_streams = []
    for q_text, a_text in corpus.iter_qa_texts(qa_path):
        token_streams.append(corpus.tokenize(q_text))
        token_streams.append(corpus.tokenize(a_text))
    vocab = corpus.build_vocabulary(token_streams, cap=vocab_cap)
    dataset = corpus.load_qa_pairs(qa_path, vocab, q_len, a_len)
    return dataset, vocab


def cmd_train(args):
    dataset, vocab = _build_dataset(
        args.qa, args.vocab_cap, args.question_len, args.answer_len
    )
    if len(dataset) == 0:
        print(f"error: QA corpus {args.qa} is empty", file=sys.stderr)
        return 1

    topic = None
    corpus_hashes = {"qa": _file_hash(args.qa)}
    if args.topic_model:
        raw = nmf.load_topic_model(args.topic_model)
        topic = nmf.align_topics(raw, vocab)
        corpus_hashes["topic_model"] = _file_hash(args.topic_model)

    config = ModelConfig(
        vocab_size=len(vocab),
        hidden_dim=args.hidden_dim,
        question_len=args.question_len,
        answer_len=args.answer_len,
        num_topics=topic.r if topic else 0,
        attention_dim=args.attention_dim,
        dropout=args.dropout,
        membership_k=topic.membership_k if topic else 0,
    )
    train_config = training.TrainConfig(
        iterations=args.iterations,
        batch_size=args.batch_size,
        learning_rate=args.learning_rate,
        dropout=args.dropout,
        seed=args.seed,
        clip_norm=None if args.no_clip else args.clip_norm,
    )

    checkpoint_fn = None
    if args.checkpoint_every:
        def checkpoint_fn(iteration, params):
            path = f"{args.out}.iter{iteration}.ckpt"
            save_checkpoint(
                params, config, path, vocab_hash=vocab.content_hash(),
                topic_model_hash=topic.content_hash() if topic else None,
                seed=args.seed, iteration=iteration,
            )

    params, report = training.train(
        dataset, topic, config, train_config,
        metrics_path=args.metrics,
        checkpoint_every=args.checkpoint_every,
        checkpoint_fn=checkpoint_fn,
    )
    proposal = build_proposal_table(dataset, vocab, args.answer_len)
    bundle = service.ModelBundle(
        config=config, params=params, vocab=vocab, topic_model=topic,
        proposal=proposal,
        manifest=service.make_manifest(args.seed, corpus_hashes, vocab, topic),
    )
    service.save_bundle(bundle, args.out)
    print(f"final loss: {report.final_loss:.6f}")
    print(f"wrote bundle to {args.out}")
    return 0


def cmd_eval(args):
    bundle = service.load_bundle(args.bundle)
    dataset = corpus.load_qa_pairs(
        args.qa, bundle.vocab, bundle.config.question_len,
        bundle.config.answer_len,
    )
    loss = training.evaluate(
        dataset, bundle.params, bundle.topic_model, bundle.config
    )
    print(f"loss: {loss:.6f}")
    return 0


def cmd_chat(args):
    bundle = service.load_bundle(args.bundle)
    seed = args.seed
    print("type a message and press enter (ctrl-d to exit)")
    for line in sys.stdin:
        question = line.strip()
        if not question:
            continue
        if args.mode == "mh":
            result = generate_mh(question, bundle, steps=args.mh_steps, seed=seed)
            seed += 1
        else:
            result = generate_greedy(question, bundle)
        print(f"> {result.text}")
        if args.show_topics and result.code is not None:
            code = " ".join(f"{k:.3f}" for k in result.code)
            print(f"  topic code: [{code}]")
            for t, alpha in enumerate(result.topic_attention):
                weights = " ".join(f"{a:.2f}" for a in alpha)
                print(f"  step {t} topic attention: [{weights}]")
    return 0


def cmd_serve(args):
    paths = {}
    for item in args.bundle:
        if "=" in item:
            name, path = item.split("=", 1)
        else:
            name, path = Path(item).stem, item
        paths[name] = path
    service.serve(paths, host=args.host, port=args.port)
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="topicchat",
        description="Topic-aware chatbot: NMF topics plus a GRU encoder-decoder",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("topics-build", help="learn a topic model from a corpus")
    p.add_argument("--corpus", required=True,
                   help="text file (one document per line) or directory of .txt files")
    p.add_argument("--topics", type=int, default=10, help="number of topics r")
    p.add_argument("--membership-k", type=int, default=100,
                   help="top-K words per topic used by the bias indicator")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output topic model file")
    p.add_argument("--vocab-cap", type=int, default=20004)
    p.add_argument("--max-iters", type=int, default=500)
    p.add_argument("--stop-words", default=None,
                   help="optional whitespace-separated stop word file")
    p.set_defaults(fn=cmd_topics_build)

    p = sub.add_parser("train", help="train a chatbot on a QA corpus")
    p.add_argument("--qa", required=True, help="JSONL file of {'q':..., 'a':...}")
    p.add_argument("--topic-model", default=None,
                   help="topic model file; omit for the non-topic baseline")
    p.add_argument("--out", required=True, help="output bundle file")
    p.add_argument("--iterations", type=int, default=1000)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--learning-rate", type=float, default=0.01)
    p.add_argument("--dropout", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--hidden-dim", type=int, default=64)
    p.add_argument("--attention-dim", type=int, default=64)
    p.add_argument("--question-len", type=int, default=25)
    p.add_argument("--answer-len", type=int, default=25)
    p.add_argument("--vocab-cap", type=int, default=18004)
    p.add_argument("--clip-norm", type=float, default=5.0)
    p.add_argument("--no-clip", action="store_true")
    p.add_argument("--metrics", default=None, help="JSONL metrics log path")
    p.add_argument("--checkpoint-every", type=int, default=None)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="teacher-forced loss of a bundle on a QA file")
    p.add_argument("--bundle", required=True)
    p.add_argument("--qa", required=True)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("chat", help="interactive REPL against a bundle")
    p.add_argument("--bundle", required=True)
    p.add_argument("--mode", choices=("greedy", "mh"), default="greedy")
    p.add_argument("--mh-steps", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--show-topics", action="store_true",
                   help="print the topic code and per-step topic attention")
    p.set_defaults(fn=cmd_chat)

    p = sub.add_parser("serve", help="serve the HTTP chat API")
    p.add_argument("--bundle", action="append", required=True,
                   help="bundle file, optionally NAME=PATH; repeatable")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.set_defaults(fn=cmd_serve)

    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
