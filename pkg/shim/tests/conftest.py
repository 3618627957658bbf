"""Build a tiny masked LM on disk and serve it for the test session.

The hub is unreachable in CI, so the 'small real MLM' is a seeded
random-initialized BERT with a hand-rolled WordPiece vocabulary: real
architecture, real tokenizer, deterministic weights.
"""

from __future__ import annotations

import threading
import time

import pytest

VOCAB = [
    "[PAD]",
    "[UNK]",
    "[CLS]",
    "[SEP]",
    "[MASK]",
    "men",
    "women",
    "are",
    "rude",
    "kind",
    ".",
    "why",
    "so",
    "?",
    "the",
    "priests",
    "imams",
    "violent",
    "always",
    "##s",
    "##ical",
    "hyster",
]


@pytest.fixture(scope="session")
def tiny_model_dir(tmp_path_factory) -> str:
    import torch
    from tokenizers import Tokenizer
    from tokenizers.models import WordPiece
    from tokenizers.pre_tokenizers import Whitespace
    from transformers import BertConfig, BertForMaskedLM, BertTokenizerFast

    target = tmp_path_factory.mktemp("tiny-mlm")
    wordpiece = Tokenizer(WordPiece({w: i for i, w in enumerate(VOCAB)}, unk_token="[UNK]"))
    wordpiece.pre_tokenizer = Whitespace()
    tokenizer = BertTokenizerFast(
        tokenizer_object=wordpiece,
        unk_token="[UNK]",
        pad_token="[PAD]",
        cls_token="[CLS]",
        sep_token="[SEP]",
        mask_token="[MASK]",
        model_max_length=64,
    )
    config = BertConfig(
        vocab_size=len(VOCAB),
        hidden_size=32,
        num_hidden_layers=2,
        num_attention_heads=2,
        intermediate_size=64,
        max_position_embeddings=64,
    )
    torch.manual_seed(1234)
    model = BertForMaskedLM(config)
    model.eval()
    model.save_pretrained(target)
    tokenizer.save_pretrained(target)
    return str(target)


@pytest.fixture(scope="session")
def shim_url(tiny_model_dir: str):
    import uvicorn

    from mlmshim.server import ShimConfig, create_app

    config = ShimConfig(
        model=tiny_model_dir, max_sequence_length=32, language="en"
    )
    app = create_app(config)
    server = uvicorn.Server(
        uvicorn.Config(app, host="127.0.0.1", port=0, log_level="warning")
    )
    thread = threading.Thread(target=server.run, daemon=True)
    thread.start()
    deadline = time.time() + 60
    while not server.started:
        if time.time() > deadline:
            raise RuntimeError("shim server did not start")
        time.sleep(0.05)
    port = server.servers[0].sockets[0].getsockname()[1]
    yield f"http://127.0.0.1:{port}"
    server.should_exit = True
    thread.join(timeout=10)
