"""Active perception and representation for grasping: a desk-scale implementation."""
