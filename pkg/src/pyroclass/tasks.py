"""Canonical classification tasks and their class-name orderings.

Class indices everywhere in the package follow these tuples.
"""

TASK_CLASSES = {
    "objects": ("door", "firefighter+window", "firefighter", "ladder", "window"),
    "fire": ("fire", "no-fire"),
    "poses": ("crawling", "sitting", "standing"),
}

TASK_NAMES = tuple(TASK_CLASSES)


def num_classes_for(task):
    return len(TASK_CLASSES[task])
