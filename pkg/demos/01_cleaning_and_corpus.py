"""Cleaning social media text and choosing what the encoder sees."""
from claimrank.corpus import FactCheck, Post, TextView, is_skippable, preprocess, select_text

# Links become placeholder tokens, emoji vanish, punctuation is flattened to ASCII
raw = "“BREAKING” 🔥🔥 they hid it!!! https://t.co/Ab12 pic.twitter.com/xyz"
print(preprocess(raw))
# '"BREAKING" they hid it! <URL> <IMG>'

# A post is its text followed by any OCR'd image text.
post = Post(7, "Lemon water cures cancer", ocr_text="share before they delete this",
            language="eng", text_en="Lemon water cures cancer")
print(select_text(post, TextView()))

# OCR that is mostly symbols is dropped rather than fed to the encoder
noisy = Post(8, "Lemon water cures cancer", ocr_text="#@! ~~ ||| ==")
print(select_text(noisy, TextView()))

# Fact-checks are claim plus title; the English view uses the translated claim only
fc = FactCheck(3, "El limón no cura el cáncer", title="Bulo del limón",
               claim_en="Lemon does not cure cancer")
print(select_text(fc, TextView("source")))
print(select_text(fc, TextView("english")))

for text in ["", "two words", "three real words", "$$$ ### a b c %%% ^^^"]:
    print(repr(text), "skippable" if is_skippable(text) else "kept")
