"""Reference character-trigram language detector.

Production deployments plug a real library in through the detector interface
(any callable returning (language_code, confidence)); this small
frequency-profile detector keeps the test suite hermetic and deterministic.
"""

from __future__ import annotations

import re
from collections import Counter

_WORD = re.compile(r"[^\W\d_]+", re.UNICODE)

# Everyday prose samples used to build the reference profiles.
_SEED_TEXTS = {
    "en": """
        The weather this morning was cold and clear, and the streets were
        almost empty. She walked to the station with her coat buttoned up
        and thought about the work that was waiting for her. There would be
        letters to answer, a meeting with the new people from the office
        across the river, and the long report that nobody wanted to write.
        Still, the coffee was warm and the train arrived on time, which was
        more than could be said for most days. When the doors opened she
        found a seat by the window and watched the houses slide past, one
        after another, until the city turned into fields and the fields
        turned into low grey hills under a wide pale sky. It was going to
        be a long day, but it had started well enough, and that counted
        for something.
    """,
    "fr": """
        Ce matin, le temps était froid et clair, et les rues étaient presque
        vides. Elle a marché jusqu'à la gare avec son manteau boutonné et a
        pensé au travail qui l'attendait. Il y aurait des lettres à écrire,
        une réunion avec les nouvelles personnes du bureau de l'autre côté
        du fleuve, et le long rapport que personne ne voulait rédiger.
        Pourtant, le café était chaud et le train est arrivé à l'heure, ce
        qui était déjà beaucoup pour un jour comme celui-là. Quand les
        portes se sont ouvertes, elle a trouvé une place près de la fenêtre
        et a regardé les maisons défiler, l'une après l'autre, jusqu'à ce
        que la ville devienne des champs et que les champs deviennent de
        basses collines grises sous un grand ciel pâle.
    """,
    "de": """
        Das Wetter war an diesem Morgen kalt und klar, und die Straßen waren
        fast leer. Sie ging mit zugeknöpftem Mantel zum Bahnhof und dachte an
        die Arbeit, die auf sie wartete. Es gab Briefe zu beantworten, eine
        Besprechung mit den neuen Leuten aus dem Büro auf der anderen Seite
        des Flusses und den langen Bericht, den niemand schreiben wollte.
        Trotzdem war der Kaffee warm, und der Zug kam pünktlich, was man
        nicht von jedem Tag sagen konnte. Als sich die Türen öffneten, fand
        sie einen Platz am Fenster und sah zu, wie die Häuser vorbeizogen,
        eines nach dem anderen, bis die Stadt zu Feldern wurde und die
        Felder zu niedrigen grauen Hügeln unter einem weiten blassen Himmel.
    """,
    "es": """
        El tiempo esta mañana era frío y claro, y las calles estaban casi
        vacías. Caminó hasta la estación con el abrigo abotonado y pensó en
        el trabajo que la esperaba. Habría cartas que contestar, una reunión
        con la gente nueva de la oficina al otro lado del río, y el largo
        informe que nadie quería escribir. Aun así, el café estaba caliente
        y el tren llegó a su hora, lo que ya era bastante para un día como
        aquel. Cuando se abrieron las puertas encontró un asiento junto a la
        ventana y miró cómo las casas pasaban, una tras otra, hasta que la
        ciudad se convirtió en campos y los campos en colinas bajas y grises
        bajo un cielo ancho y pálido.
    """,
}

_PROFILE_SIZE = 300


def _trigrams(text: str) -> Counter:
    counts: Counter = Counter()
    for word in _WORD.findall(text.lower()):
        padded = f" {word} "
        for i in range(len(padded) - 2):
            counts[padded[i : i + 3]] += 1
    return counts


def _build_profiles() -> dict[str, dict[str, float]]:
    profiles = {}
    for lang, text in _SEED_TEXTS.items():
        counts = _trigrams(text)
        top = counts.most_common(_PROFILE_SIZE)
        total = sum(c for _, c in top) or 1
        profiles[lang] = {g: c / total for g, c in top}
    return profiles


_PROFILES = _build_profiles()


class TrigramDetector:
    """detect(text) -> (language_code, confidence in [0, 1])."""

    def __init__(self, profiles: dict[str, dict[str, float]] | None = None):
        self.profiles = profiles or _PROFILES

    def detect(self, text: str) -> tuple[str, float]:
        counts = _trigrams(text)
        total = sum(counts.values())
        if total == 0:
            return "und", 0.0
        scores = {}
        for lang, profile in self.profiles.items():
            scores[lang] = sum(profile.get(g, 0.0) * c for g, c in counts.items()) / total
        ranked = sorted(scores.items(), key=lambda kv: kv[1], reverse=True)
        best_lang, best = ranked[0]
        second = ranked[1][1] if len(ranked) > 1 else 0.0
        if best <= 0.0:
            return "und", 0.0
        confidence = min(1.0, (best - second) / best + 0.5)
        return best_lang, confidence

    def __call__(self, text: str) -> tuple[str, float]:
        return self.detect(text)
