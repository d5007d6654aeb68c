"""Compare the two Recall@K matching modes on toy predictions.

Phrase detection looks at the union box of a triplet, relationship
detection at the subject and object boxes separately.  Usually the looser
phrase test recalls more, but not always.

Run with:  python3 demos/03_phrase_vs_relationship.py
"""

from mrgnet.geometry import Box2D, iou, union_box
from mrgnet.inference import RelationshipTriplet
from mrgnet.metrics import evaluate_dataset, match_phrase, match_relationship

gt = RelationshipTriplet(1, 3, 2, 1.0, Box2D(0, 0, 20, 20), Box2D(30, 0, 50, 20))

# Shift the object box sideways: its own IoU drops below 0.5, but the union box barely moves.
shifted = RelationshipTriplet(7, 3, 8, 0.9, Box2D(0, 0, 20, 20), Box2D(40, 0, 60, 20))
print("shifted object box")
print(f"  object IoU {iou(shifted.object_box, gt.object_box):.2f}, "
      f"union IoU {iou(union_box(shifted.subject_box, shifted.object_box), union_box(gt.subject_box, gt.object_box)):.2f}")
print(f"  phrase match {match_phrase(shifted, gt)}, relationship match {match_relationship(shifted, gt)}")

# Grow both boxes in different directions: each still hits IoU 0.5, the union box quadruples.
square = RelationshipTriplet(1, 3, 2, 1.0, Box2D(0, 0, 10, 10), Box2D(0, 0, 10, 10))
grown = RelationshipTriplet(7, 3, 8, 0.9, Box2D(0, 0, 20, 10), Box2D(0, 0, 10, 20))
print("\nboxes grown apart")
print(f"  subject IoU {iou(grown.subject_box, square.subject_box):.2f}, "
      f"object IoU {iou(grown.object_box, square.object_box):.2f}")
print(f"  phrase match {match_phrase(grown, square)}, relationship match {match_relationship(grown, square)}")

report = evaluate_dataset({"a": [shifted], "b": [grown]}, {"a": [gt], "b": [square]}, (1,))
print()
print(report.to_text(), end="")
