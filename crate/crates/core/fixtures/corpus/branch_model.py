import os
from keras.models import Sequential
from keras.layers import Conv2D, BatchNormalization, Activation, MaxPooling2D, Flatten, Dense

use_bn = os.environ.get('USE_BN') == '1'

model = Sequential()
if use_bn:
    model.add(Conv2D(32, (5, 5), input_shape=(64, 64, 3)))
    model.add(BatchNormalization())
    model.add(Activation('relu'))
else:
    model.add(Conv2D(32, (5, 5), activation='relu', input_shape=(64, 64, 3)))
model.add(MaxPooling2D((2, 2)))
model.add(Flatten())
model.add(Dense(3, activation='softmax'))
model.compile(optimizer='adam', loss='categorical_crossentropy')
