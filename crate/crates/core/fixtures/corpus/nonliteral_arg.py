import json
from keras.models import Sequential
from keras.layers import Conv2D, Flatten, Dense

with open('params.json') as f:
    params = json.load(f)

model = Sequential()
model.add(Conv2D(params['filters'], (3, 3), activation='relu', input_shape=(32, 32, 3)))
model.add(Flatten())
model.add(Dense(10, activation='softmax'))
model.compile(optimizer='adam', loss='categorical_crossentropy')
