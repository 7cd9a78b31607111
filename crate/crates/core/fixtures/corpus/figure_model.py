from keras.models import Sequential
from keras.layers import Dense, Dropout, Flatten
from keras.layers import Conv2D, MaxPooling2D
from keras.optimizers import SGD

model = Sequential()
model.add(Conv2D(64, kernel_size = (3, 3),activation='relu',input_shape=(3, 120, 180)))
model.add(MaxPooling2D(pool_size=(2,2)))
model.add(Conv2D(32, activation='relu'))
model.add(MaxPooling2D(pool_size=(2,2)))
model.add(Dropout(0.25))
model.add(Flatten())
model.add(Dense(20, activation='softmax'))
sgd = SGD(lr=0.01, decay=1e-6)
model.compile(loss='categorical_crossentropy', optimizer=sgd)
