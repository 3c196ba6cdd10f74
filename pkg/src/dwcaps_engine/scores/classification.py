import numpy as np

from dwcaps_engine.core.utils.errors import ContractError


def accuracy(predictions, labels):
    predictions, labels = np.asarray(predictions), np.asarray(labels)
    if predictions.shape != labels.shape:
        raise ContractError(f"{predictions.shape} predictions for {labels.shape} labels.")
    if labels.size == 0:
        return 0.0
    return float(np.mean(predictions == labels))


def confusion_matrix(predictions, labels, num_classes):
    """Counts with true classes on rows and predicted classes on columns."""
    out = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(out, (np.asarray(labels), np.asarray(predictions)), 1)
    return out


def accuracy_from_confusion(confusion):
    total = confusion.sum()
    return float(np.trace(confusion) / total) if total else 0.0


def linear_probe_accuracy(bundle, ridge=1e-2):
    """
    Test accuracy of a one-vs-rest ridge classifier on raw pixels, fitted on
    the train split. Baseline for how separable a dataset is without features.
    """
    x_train, y_train = bundle.train_view()
    x_test, y_test = bundle.test_view()
    x_train = x_train.reshape(len(x_train), -1)
    x_test = x_test.reshape(len(x_test), -1)
    mean = x_train.mean(axis=0)
    a = np.hstack([x_train - mean, np.ones((len(x_train), 1))])
    targets = np.eye(bundle.num_classes)[y_train] * 2.0 - 1.0
    # dual form: the pixel count usually exceeds the item count
    gram = a @ a.T + ridge * np.eye(len(a))
    weights = a.T @ np.linalg.solve(gram, targets)
    b = np.hstack([x_test - mean, np.ones((len(x_test), 1))])
    return accuracy(np.argmax(b @ weights, axis=1), y_test)
