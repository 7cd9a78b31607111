import sys
from keras.models import Sequential
from keras.layers import Conv2D, Flatten, Dense

depth = int(sys.argv[1])
model = Sequential()
model.add(Conv2D(32, (3, 3), activation='relu', input_shape=(32, 32, 3)))
i = 0
while i < depth:
    model.add(Conv2D(32, (3, 3), activation='relu'))
    i += 1
model.add(Flatten())
model.add(Dense(10, activation='softmax'))
model.compile(optimizer='sgd', loss='categorical_crossentropy')
