"""Message catalogs for vimkit's terminal output.

One JSON file per language in vimkit/locales/. Lookups walk the chain
active locale -> base language -> English -> the key itself, so a partial
catalog is always usable.

    from vimkit.i18n import t, set_locale
    set_locale("pt_BR")
    print(t("verdict.reject", group="x1", beta=0.0))

Error prefixes (E_CONFIG, E_DATA, E_DEGENERATE) and report field names are
never translated.
"""

import json
import locale
import os
from functools import lru_cache
from importlib.resources import files

DEFAULT_LANG = "en"
LANG_ENV = "VIMKIT_LANG"

_chain = (DEFAULT_LANG,)


def _locales():
    return files("vimkit").joinpath("locales")


def _normalize(lang):
    """'pt-BR.UTF-8' -> 'pt_BR'."""
    return lang.replace("-", "_").split(".")[0]


@lru_cache(maxsize=None)
def catalog(lang):
    """Messages for one language; empty when the catalog is missing or broken."""
    try:
        text = _locales().joinpath(f"{lang}.json").read_text(encoding="utf-8")
        return json.loads(text)
    except (OSError, ValueError):
        return {}


def set_locale(lang):
    """Activate a language ("pt-BR", "pt_BR.UTF-8" and "pt_BR" are equivalent)."""
    global _chain
    lang = _normalize(lang)
    chain = [lang, lang.split("_")[0], DEFAULT_LANG]
    _chain = tuple(dict.fromkeys(chain))


def get_locale():
    return _chain[0]


def detect_locale():
    """VIMKIT_LANG, then the system locale, then LANG/LC_ALL, then English."""
    candidates = [os.environ.get(LANG_ENV, "")]
    try:
        candidates.append(locale.getlocale()[0] or "")
    except (ValueError, TypeError):
        pass
    candidates.append(os.environ.get("LANG", os.environ.get("LC_ALL", "")))
    for lang in candidates:
        if lang and lang not in ("C", "POSIX"):
            return _normalize(lang)
    return DEFAULT_LANG


def available_locales():
    return sorted(entry.name[:-len(".json")] for entry in _locales().iterdir()
                  if entry.name.endswith(".json"))


def t(key, **kwargs):
    """Translate `key`, substituting {placeholders} from kwargs."""
    text = next((catalog(lang)[key] for lang in _chain if key in catalog(lang)), key)
    if not kwargs:
        return text
    try:
        return text.format(**kwargs)
    except (KeyError, IndexError, ValueError):
        return text
