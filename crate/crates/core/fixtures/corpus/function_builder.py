from keras.models import Sequential
from keras.layers import Conv2D, MaxPooling2D, Flatten, Dense


def build_model(num_classes):
    model = Sequential()
    model.add(Conv2D(24, (3, 3), activation='relu', input_shape=(64, 64, 1)))
    model.add(MaxPooling2D((2, 2)))
    model.add(Flatten())
    model.add(Dense(num_classes, activation='softmax'))
    model.compile(optimizer='adagrad', loss='categorical_crossentropy')
    return model


model = build_model(6)
