import matplotlib.pyplot as plt
import numpy as np


def plot_history(history, path):
    fig, ax = plt.subplots()
    ax.plot(np.arange(len(history)), history)
    ax.set_xlabel('epoch')
    fig.savefig(path)
