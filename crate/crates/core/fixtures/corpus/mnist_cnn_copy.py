# Same network as the MNIST example, written with different names.
from keras.models import Sequential
from keras.layers import Dense, Dropout, Flatten, Conv2D, MaxPooling2D
from keras.optimizers import Adadelta

classes = 10
net = Sequential()
net.add(Conv2D(32, kernel_size=(3, 3), activation='relu', input_shape=(28, 28, 1)))
net.add(Conv2D(64, (3, 3), activation='relu'))
net.add(MaxPooling2D(pool_size=(2, 2)))
net.add(Dropout(0.25))
net.add(Flatten())
net.add(Dense(128, activation='relu'))
net.add(Dropout(0.5))
net.add(Dense(classes, activation='softmax'))
net.compile(loss='categorical_crossentropy', optimizer=Adadelta(), metrics=['accuracy'])
