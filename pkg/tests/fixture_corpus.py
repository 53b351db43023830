"""The 20-pair fixture corpus used by the NLG metric oracle checks.

Pairs of (model candidate, gold reference) spanning identical texts, partial
overlaps, disjoint vocabularies, number tokens, and morphological variants
(so the METEOR stem stage is exercised).
"""

FIXTURE_PAIRS = [
    ("Right renal mass, likely benign.",
     "Right renal mass, likely benign."),
    ("There is a nodule in the prevascular space.",
     "There is a nodule in the prevascular space measuring 1.8 cm x 1.0 cm."),
    ("A mass in the right upper lobe of the lung.",
     "Right posterior hemithorax mass."),
    ("Multiple osteolytic sacral and pelvic lesions.",
     "Destructive left iliac bone ilium mass."),
    ("The liver is unremarkable.",
     "Hypodense lesion in segment 4 of the liver."),
    ("No acute findings.",
     "Right renal parapelvic cyst."),
    ("Masses are seen in the retroperitoneum.",
     "Smaller retroperitoneal nodules and masses."),
    ("Enlarged lymph node measuring 2.0 cm.",
     "Enlarged lymph node measuring 2.0 cm x 1.2 cm."),
    ("A cyst is present in the left kidney.",
     "Simple cyst in the upper pole of the left kidney."),
    ("Nodules scattered throughout both lungs.",
     "Pulmonary nodules scattered throughout both lungs."),
    ("The spleen is enlarged.",
     "Splenomegaly with a wedge-shaped infarct."),
    ("Well-circumscribed homogenous mass in the right abdomen.",
     "Right renal parapelvic cyst."),
    ("Right kidney mass, likely a cyst.",
     "Right renal mass consistent with a cyst."),
    ("There is a 5 mm calculus in the mid ureter.",
     "There is a 5 mm non-obstructing calculus in the mid ureter on the right."),
    ("Large necrotic hepatic mass.",
     "Large necrotic right hepatic mass."),
    ("Appendicolith within the appendix.",
     "Hyperdense focus within the appendix suggestive of appendicolith."),
    ("The pancreas appears normal.",
     "Mediastinal adenopathy with bilateral pleural effusions."),
    ("A lesion invades the adjacent muscles.",
     "Extraosseous mass invading the adjacent iliopsoas and gluteus minimus muscles."),
    ("Stable appearance of the treated lesion.",
     "Treated lesion is stable in appearance."),
    ("Mass abutting the left iliac artery.",
     "Mass abuts the left internal iliac artery."),
]
