"""Topic-aware chatbot: NMF topic modeling plus a GRU encoder-decoder
whose output distribution is biased toward the question's topics."""

__version__ = "0.1.0"
