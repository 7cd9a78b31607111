from keras.models import Sequential
from keras.layers import Dense, Dropout, Flatten, Conv2D, MaxPooling2D
from keras.optimizers import Adam

clf = Sequential()
clf.add(Conv2D(64, kernel_size=(3, 3), activation='relu', input_shape=(3, 120, 180)))
clf.add(MaxPooling2D(pool_size=(2, 2)))
clf.add(Conv2D(32, activation='relu'))
clf.add(MaxPooling2D(pool_size=(2, 2)))
clf.add(Dropout(0.25))
clf.add(Flatten())
clf.add(Dense(20, activation='softmax'))
clf.compile(loss='categorical_crossentropy', optimizer=Adam(lr=0.0005))
