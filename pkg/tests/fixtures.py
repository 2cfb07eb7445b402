"""Shared fixture builders: English-looking synthetic documents and
scripted pipeline clients."""

import json
import random

from scicorpus.corpus import Document
from scicorpus.langid import TrigramDetector
from scicorpus.llm_stages import identity_complete_client, identity_refine_client
from scicorpus.model_client import MockChatClient, ScriptedClassifier, default_labels
from scicorpus.pipeline import PipelineClients

ENGLISH_BANK = (
    "the of and to in that it was for on with as his they at be this have "
    "from or had by word but what some we can out other were all there when "
    "up use your how said an each she which do their time if will way about "
    "many then them write would like so these her long make thing see him "
    "two has look more day could go come did number sound no most people my "
    "over know water than call first who may down side been now find any new "
    "work part take get place made live where after back little only round "
    "man year came show every good me give our under name very through just "
    "form sentence great think say help low line differ turn cause much mean "
    "before move right boy old too same tell does set three want air well "
    "also play small end put home read hand port large spell add even land "
    "here must big high such follow act why ask men change went light kind "
    "off need house picture try us again animal point mother world near "
    "build self earth father"
).split()

FRENCH_SAMPLE = (
    "Le matin, elle marchait le long de la rivière et regardait les bateaux "
    "qui descendaient lentement vers le port. Les rues de la ville étaient "
    "encore calmes, et les boutiques ouvraient leurs portes une à une. Elle "
    "pensait au travail qui l'attendait et à la réunion avec les nouveaux "
    "collègues du bureau. "
)


def english_text(rng: random.Random, n_words: int, paragraph_every: int = 60) -> str:
    parts = []
    for i in range(n_words):
        parts.append(rng.choice(ENGLISH_BANK))
        if (i + 1) % 12 == 0:
            parts[-1] += "."
        if (i + 1) % paragraph_every == 0:
            parts[-1] += "\n\n"
    return " ".join(parts).replace("\n\n ", "\n\n").strip()


def english_doc(doc_id: str, rng: random.Random, n_words: int = 600, **kwargs) -> Document:
    return Document(id=doc_id, text=english_text(rng, n_words), **kwargs)


def scripted_clients(
    mcq_generator=None,
    classifier_labels=None,
    book_paper_is_article=True,
) -> PipelineClients:
    """Fully scripted backends: the whole pipeline runs without a network."""
    book_paper_reply = json.dumps(
        {"analysis": "scripted", "is_article": book_paper_is_article}
    )
    pass_reply = json.dumps({"is_valid": True, "overall_assessment": "scripted pass"})
    return PipelineClients(
        classifier=ScriptedClassifier(default=classifier_labels or default_labels()),
        book_paper=MockChatClient(responder=lambda _p: book_paper_reply),
        refine=identity_refine_client(),
        complete=identity_complete_client(),
        mcq_generator=mcq_generator or MockChatClient(responder=lambda _p: "No QA"),
        mcq_completeness=MockChatClient(responder=lambda _p: pass_reply),
        mcq_correctness=MockChatClient(responder=lambda _p: pass_reply),
        detector=TrigramDetector(),
    )
