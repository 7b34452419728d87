"""Regenerate the bundled POS lexicon: a small general English table plus
every word of the toy sentiment world (toy entries win on conflict)."""

from pathlib import Path

from agnostic_attack.toy import toy_lexicon

GENERAL = {
    "DET": "the a an this that these those each every some any no its another either neither all both",
    "PRON": "i me my mine myself you your yours he him his she her hers it itself we us our ours they them "
            "their theirs who whom whose what which someone anyone everyone nothing something anything",
    "VERB": "is are was were be been being am do does did done have has had having go goes went gone make "
            "makes made get gets got see sees saw seen say says said know knows knew think thinks thought "
            "take takes took come comes came want wants like likes liked love loves loved hate hates hated "
            "give gives gave find finds found tell tells told feel feels felt seem seems seemed become "
            "becomes became look looks looked watch watches watched enjoy enjoyed recommend recommended "
            "can could will would shall should may might must",
    "ADV": "so very too quite really just not never always often sometimes also still already almost rather "
           "fairly pretty truly simply only even ever here there now then again well badly much more most "
           "less least soon later",
    "ADJ": "good bad great terrible nice happy sad best worst better worse new old big small long short high "
           "low funny serious interesting beautiful ugly easy hard",
    "NOUN": "movie film time day year man woman people thing way life world work story book show music song "
            "game night home family friend friends place idea",
    "OTHER": "and or but if because while although of in on at by for with about to from into over under "
             "after before than as",
}


def main():
    lexicon = {}
    for tag, words in GENERAL.items():
        for w in words.split():
            lexicon.setdefault(w, tag)
    lexicon.update(toy_lexicon())
    out = Path(__file__).resolve().parents[1] / "src" / "agnostic_attack" / "data" / "pos_lexicon.tsv"
    with out.open("w", encoding="utf-8") as fh:
        fh.write("# word<TAB>coarse tag (NOUN VERB ADJ ADV PRON DET OTHER)\n")
        for w in sorted(lexicon):
            fh.write(f"{w}\t{lexicon[w]}\n")
    print(f"wrote {len(lexicon)} entries to {out}")


if __name__ == "__main__":
    main()
