#!/usr/bin/env python3
"""Qualitative demo: airline-support topics plus a topic-aware chatbot.

Builds a small airline customer-service corpus, learns topic vectors by
NMF, trains topic-aware and non-topic chatbots on matching QA pairs, and
prints the learned topics, both models' training losses, and replies to
topical questions. Everything here is qualitative (topics depend on the
seed and the corpus); the quantitative suite lives in tests/.

Run:  python scripts/demo.py
"""

import json
import tempfile
import time
from pathlib import Path

from topicchat import corpus, nmf, training
from topicchat.generation import build_proposal_table, generate_greedy
from topicchat.seq2seq import ModelConfig
from topicchat.service import ModelBundle

TOPIC_DOCS = {
    "baggage": [
        "my bag is lost the baggage claim office checked nothing",
        "lost luggage at the airport please check the baggage carousel",
        "the team checked the baggage claim and found my bags",
        "bags go to baggage claim after you land at the airport",
        "please check your bag tag before leaving the airport",
        "checked luggage missing file a claim with the baggage team",
    ],
    "delays": [
        "the flight is delayed two hours sorry for the delay",
        "crew arrived late so the gate changed and the flight is delayed",
        "sorry to hear your flight was delayed for hours at the gate",
        "a delay of three hours the crew apologized at the gate",
        "delayed flights stack up when the crew times out",
        "the gate agent said the delay would last one hour",
    ],
    "loyalty": [
        "thank you for flying with us we appreciate your feedback",
        "we appreciate your loyalty thank you for the great feedback",
        "thanks for sharing feedback have a great day flying",
        "your loyalty matters thank you for flying with our great team",
        "we welcome your feedback thank you and have a great day",
        "thank you so much we appreciate you flying with us",
    ],
    "seating": [
        "an upgrade to comfort class puts you in a middle seat",
        "seats in economy are available the middle seat is free",
        "your seat upgrade cleared enjoy the extra comfort",
        "no middle seats left only economy class seats are available",
        "seat changes and upgrades open at the gate in economy",
        "comfort class seats have more room than economy seats",
    ],
    "rebooking": [
        "let us know if you need assistance rebooking your trip",
        "our apologies we can assist with rebooking right away",
        "need assistance the rebooking desk can assist with apologies",
        "we will rebook you let us know what you need",
        "rebooking help is available let our team assist you",
        "apologies for the trouble we can assist with a new booking",
    ],
}

QA_PAIRS = [
    ("i lost something at the airport", "please check the baggage claim"),
    ("where did my bags go", "check the baggage claim office"),
    ("my luggage is missing", "the team will check the claim"),
    ("is my flight on time", "sorry the flight is delayed"),
    ("why is the gate empty", "the crew is delayed two hours"),
    ("how long is the delay", "the delay is two hours"),
    ("thanks for the quick help", "thank you for flying with us"),
    ("you were very helpful", "we appreciate your feedback"),
    ("i appreciate the support", "thank you for your loyalty"),
    ("can i change my seat", "economy seats are available"),
    ("is an upgrade possible", "comfort class has a seat"),
    ("i hate the middle seat", "we can upgrade your seat"),
    ("my trip fell apart", "we can assist with rebooking"),
    ("can you rebook me", "the desk will assist you"),
    ("i need a new flight", "let us assist with rebooking"),
] * 4  # repetition stands in for a larger conversational corpus


STOP_WORDS = (
    "a an and are at by for from in is it my no of on or our so the this "
    "to was we what where why with you your"
).split()


def main():
    out_dir = Path(tempfile.mkdtemp(prefix="topicchat-demo-"))
    print(f"working directory: {out_dir}\n")

    # topic matrix from the support corpus
    docs = [d for lines in TOPIC_DOCS.values() for d in lines]
    doc_tokens = [corpus.tokenize(d) for d in docs]
    topic_vocab = corpus.build_vocabulary(doc_tokens, cap=2000)
    weighted = corpus.tfidf_transform(
        corpus.build_doc_term_matrix(doc_tokens, topic_vocab, stop_words=STOP_WORDS)
    )
    topic_model = nmf.build_topic_model(
        weighted, topic_vocab, r=5, membership_k=12, seed=0, source="airline-demo"
    )
    print("topics learned from the support corpus:")
    for j in range(topic_model.r):
        print(f"  topic {j}: {' '.join(nmf.top_words(topic_model, j, 10))}")

    baggage_words = {"bag", "baggage", "check", "claim", "airport"}
    hits = max(
        len(baggage_words & set(nmf.top_words(topic_model, j, 10)))
        for j in range(topic_model.r)
    )
    print(f"\nbest baggage-word overlap in any topic's top-10: {hits}/5 "
          f"({'ok' if hits >= 3 else 'weak'})")

    # chatbot corpora
    qa_path = out_dir / "qa.jsonl"
    qa_path.write_text(
        "\n".join(json.dumps({"q": q, "a": a}) for q, a in QA_PAIRS)
    )
    streams = [corpus.tokenize(q) for q, _ in QA_PAIRS] + [
        corpus.tokenize(a) for _, a in QA_PAIRS
    ]
    vocab = corpus.build_vocabulary(streams, cap=2000)
    dataset = corpus.load_qa_pairs(qa_path, vocab, 8, 8)
    aligned = nmf.align_topics(topic_model, vocab)

    config = ModelConfig(
        vocab_size=len(vocab), hidden_dim=32, question_len=8, answer_len=8,
        num_topics=aligned.r, attention_dim=32, dropout=0.1, membership_k=12,
    )
    train_config = training.TrainConfig(
        iterations=1200, batch_size=15, seed=1, dropout=0.1, learning_rate=0.05,
    )

    print("\ntraining the topic-aware model...")
    t0 = time.time()
    params_topic, report_topic = training.train(dataset, aligned, config, train_config)
    print(f"  final loss {report_topic.final_loss:.4f} ({time.time() - t0:.0f}s)")

    print("training the non-topic baseline...")
    t0 = time.time()
    params_plain, report_plain = training.train(dataset, None, config, train_config)
    print(f"  final loss {report_plain.final_loss:.4f} ({time.time() - t0:.0f}s)")

    ordering = "<=" if report_topic.final_loss <= report_plain.final_loss else ">"
    print(f"\ntopic-aware loss {report_topic.final_loss:.4f} {ordering} "
          f"non-topic loss {report_plain.final_loss:.4f}")

    proposal = build_proposal_table(dataset, vocab, 8)
    bundle = ModelBundle(config=config, params=params_topic, vocab=vocab,
                         topic_model=aligned, proposal=proposal, manifest={})

    print("\nconversation with the topic-aware model:")
    for question in [
        "i lost something at the airport",
        "is my flight on time",
        "thanks for the quick help",
        "can i change my seat",
    ]:
        result = generate_greedy(question, bundle)
        used = result.topic_words_used(vocab)
        note = f"  [topic words: {' '.join(used)}]" if used else ""
        print(f"  you: {question}")
        print(f"  bot: {result.text}{note}")

    airport = generate_greedy("i lost something at the airport", bundle)
    overlap = set(airport.text.split()) & {"check", "baggage", "claim", "bag", "airport"}
    print(f"\nairport question uses related topic words: "
          f"{sorted(overlap) if overlap else 'none'}")


if __name__ == "__main__":
    main()
