from keras.models import Sequential
from keras.layers import Conv2D, Activation, MaxPooling2D, Flatten, Dense


def conv_block(model, filters):
    model.add(Conv2D(filters, (3, 3), padding='same'))
    model.add(Activation('relu'))
    model.add(MaxPooling2D((2, 2)))


model = Sequential()
model.add(Conv2D(32, (3, 3), padding='same', activation='relu', input_shape=(96, 96, 3)))
conv_block(model, 64)
conv_block(model, 128)
model.add(Flatten())
model.add(Dense(2, activation='softmax'))
model.compile(optimizer='adam', loss='categorical_crossentropy')
