from keras.models import Sequential
from keras.layers import Conv2D, Flatten, Dense

model = Sequential()
model.add(Conv2D(8, (3, 3), input_shape=(16, 16, 1)))
model.add(Flatten())
model.add(Dense(1))
model.compile(loss='mse', optimizer='sgd')
